//! `key=value` training configuration files.

use std::path::Path;

use emm::model::TrainConfig;

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("bad value {value:?} for `{key}`"))
}

pub fn parse_pair(value: &str) -> Result<(f64, f64), String> {
    match value.split(',').map(str::trim).collect::<Vec<_>>().as_slice() {
        [a, b] => Ok((parse("pair", a)?, parse("pair", b)?)),
        _ => Err(format!("expected two comma-separated numbers, got {value:?}")),
    }
}

/// Sets one field of `cfg` by its name.
pub fn set_field(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "nu1" => cfg.nu1 = parse(key, value)?,
        "nu2" => cfg.nu2 = parse(key, value)?,
        "mode" => cfg.mode = value.to_string(),
        "rho_rule" => cfg.rho_rule = value.to_string(),
        "em_max_iters" => cfg.em_max_iters = parse(key, value)?,
        "estep_max_iters" => cfg.estep_max_iters = parse(key, value)?,
        "newton_max_iters" => cfg.newton_max_iters = parse(key, value)?,
        "elbo_rel_tol" => cfg.elbo_rel_tol = parse(key, value)?,
        "newton_tol" => cfg.newton_tol = parse(key, value)?,
        "violation_eps" => cfg.violation_eps = parse(key, value)?,
        "cutting_plane_max_rounds" => cfg.cutting_plane_max_rounds = parse(key, value)?,
        "qp_max_sweeps" => cfg.qp_max_sweeps = parse(key, value)?,
        "qp_tol" => cfg.qp_tol = parse(key, value)?,
        "chi" => cfg.chi = parse_pair(value)?,
        "eta" => cfg.eta = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        _ => return Err(format!("unknown configuration key `{key}`")),
    }
    Ok(())
}

/// Applies every `key=value` line of a file. Blank lines and lines starting
/// with `#` are skipped.
pub fn apply_file(cfg: &mut TrainConfig, path: &Path) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), i + 1))?;
        set_field(cfg, key.trim(), value.trim()).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
    }
    Ok(())
}
