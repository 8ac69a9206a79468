use threadkb_server::{serve, AppState, ServerConfig};

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = async {
        let state = AppState::new(ServerConfig::from_env()?)?;
        serve(state).await
    }
    .await;
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
