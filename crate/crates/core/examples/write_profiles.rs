//! Regenerates the built-in GPU profiles under `configs/`.
//!
//! cargo run -p gamorra-core --example write_profiles

use gamorra_core::sim::{game_profile, linear_profile, reference_profile};

fn main() -> gamorra_core::Result<()> {
    std::fs::create_dir_all("configs")?;
    for (name, profile) in [
        ("reference", reference_profile()),
        ("linear", linear_profile()),
        ("game", game_profile()),
    ] {
        std::fs::write(format!("configs/{name}_profile.json"), profile.to_json()? + "\n")?;
    }
    Ok(())
}
