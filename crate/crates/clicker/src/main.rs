use clap::Parser;

#[derive(Parser)]
#[command(name = "gpm-clicker", version, about = "Serve live clicker-training sessions")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let listener = tokio::net::TcpListener::bind(args.addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, gpm_clicker::router(gpm_clicker::AppState::new())).await
}
