//! Maximum bipartite matching (Hopcroft–Karp).

use std::collections::VecDeque;

const NIL: usize = usize::MAX;

/// Size of a maximum matching between `left` vertices `0..adj.len()` and
/// right vertices `0..n_right`; `adj[u]` lists the right neighbours of `u`.
pub fn maximum_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    let n_left = adj.len();
    let mut pair_l = vec![NIL; n_left];
    let mut pair_r = vec![NIL; n_right];
    let mut dist = vec![0usize; n_left];
    let mut matched = 0;
    while bfs(adj, &pair_l, &pair_r, &mut dist) {
        for u in 0..n_left {
            if pair_l[u] == NIL && dfs(u, adj, &mut pair_l, &mut pair_r, &mut dist) {
                matched += 1;
            }
        }
    }
    matched
}

fn bfs(adj: &[Vec<usize>], pair_l: &[usize], pair_r: &[usize], dist: &mut [usize]) -> bool {
    let mut q = VecDeque::new();
    for u in 0..adj.len() {
        if pair_l[u] == NIL {
            dist[u] = 0;
            q.push_back(u);
        } else {
            dist[u] = usize::MAX;
        }
    }
    let mut found = false;
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            match pair_r[v] {
                NIL => found = true,
                w if dist[w] == usize::MAX => {
                    dist[w] = dist[u] + 1;
                    q.push_back(w);
                }
                _ => {}
            }
        }
    }
    found
}

fn dfs(u: usize, adj: &[Vec<usize>], pair_l: &mut [usize], pair_r: &mut [usize], dist: &mut [usize]) -> bool {
    for i in 0..adj[u].len() {
        let v = adj[u][i];
        let w = pair_r[v];
        if w == NIL || (dist[w] == dist[u] + 1 && dfs(w, adj, pair_l, pair_r, dist)) {
            pair_l[u] = v;
            pair_r[v] = u;
            return true;
        }
    }
    dist[u] = usize::MAX;
    false
}
