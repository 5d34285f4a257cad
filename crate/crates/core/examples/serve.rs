//! Train a small model and serve it over HTTP. The bind address comes from
//! GSRECOLOR_BIND (default 127.0.0.1:8080).
//!
//! cargo run --release --example serve
//! curl http://127.0.0.1:8080/spec

use gsrecolor::scene::{reference_spec, synth_scene};
use gsrecolor::service::{bind_address, serve, AppState, Loaded};
use gsrecolor::training::{train, TrainConfig};

fn main() -> gsrecolor::Result<()> {
    let scene = synth_scene(&reference_spec())?;
    let config = TrainConfig {
        steps: 200,
        minibatches_per_batch: 16,
        ..TrainConfig::default()
    };
    let checkpoint = train(&scene, &config)?;
    let state = AppState::new(Some(Loaded::new(scene, &checkpoint)?));
    let bind = bind_address();
    println!("listening on http://{bind}  (GET /spec lists the endpoints)");
    tokio::runtime::Runtime::new()?.block_on(serve(state, &bind))
}
