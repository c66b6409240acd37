//! Relative value iteration on the coarse Table 1 lattice.
//!
//! ```text
//! cargo run --release -p mcam --example coarse_rvi -- [h] [resolution] [paper|semi] [per|scalar] [relaxation]
//! ```

use std::time::Instant;

use mcam::solver::{rvi_solve, ActionResolution, Centering, RviConfig, RviVariant};
use mcam::{Grid, ModelParams};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let h: f64 = args.get(1).map_or(0.5, |s| s.parse().unwrap());
    let res: usize = args.get(2).map_or(11, |s| s.parse().unwrap());
    let variant = match args.get(3).map(String::as_str) {
        Some("semi") => RviVariant::SemiMdp,
        _ => RviVariant::Paper,
    };
    let centering = match args.get(4).map(String::as_str) {
        Some("scalar") => Centering::Scalar,
        _ => Centering::PerRegime,
    };
    let params = ModelParams::table1();
    let grid = Grid::for_model(&params, h).unwrap();
    let config = RviConfig {
        resolution: ActionResolution::uniform(res),
        variant,
        centering,
        relaxation: args
            .get(5)
            .map_or(RviConfig::default().relaxation, |s| s.parse().unwrap()),
        ..Default::default()
    };
    let start = Instant::now();
    let out = match rvi_solve(&params, &grid, &config) {
        Ok(out) => out,
        Err(e) => {
            println!("{e} after {:.1?}", start.elapsed());
            return;
        }
    };
    println!(
        "sweeps {} gain {:.6} iteration gain {:.6} span {:.4} in {:.1?}",
        out.sweeps,
        out.gain.gamma,
        out.iteration_gain.gamma,
        out.max_span,
        start.elapsed()
    );
    for k in (1..grid.len() - 1).step_by(2) {
        let (u0, u1) = (out.policy.get(k, 0), out.policy.get(k, 1));
        println!(
            "{:6.2}  {:.2} {:.2} {:.3} | {:.2} {:.2} {:.3}",
            grid.x(k),
            u0.retention,
            u0.risky,
            u0.dividend,
            u1.retention,
            u1.risky,
            u1.dividend
        );
    }
}
