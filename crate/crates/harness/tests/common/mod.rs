use deepc_harness::{AttackMode, ExperimentConfig};

pub const SMALL_MASSES: &str = r#"
[plant]
kind = "oscillating-masses"

[dpc]
sigma = 6
ell = 10
ng = 200

[reference]
kind = "setpoint"
y = [1.0, 1.0, 0.0, 0.0]

[attack]
mode = "none"
rho = 0.05

[run]
steps = 40
replan_interval = 5
"#;

#[allow(dead_code)]
pub fn small_config(mode: AttackMode, rho: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(SMALL_MASSES).unwrap();
    cfg.attack.mode = mode;
    cfg.attack.rho = rho;
    cfg
}
