use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use sosrelax::apps::{self, AppError};
use sosrelax::colgen::{ColGenOptions, Mode};
use sosrelax::polya::{self, Membership, PolyaError, Variant};
use sosrelax::{conic, io, ConeProgram, ConeTag, GramCertificate, Polynomial};

#[derive(Parser)]
#[command(name = "sosrelax", version, about = "LP and SOCP relaxations of polynomial problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the JSON result here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replay certificates and run sampled sanity checks.
    #[arg(long, global = true)]
    verify: bool,
    /// Write a listing of every conic program solved.
    #[arg(long, global = true, value_name = "PATH")]
    dump_conic: Option<PathBuf>,
    /// Seed for sampled diagnostics.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args, Clone, Copy)]
struct Pricing {
    /// Pricing mode: lp-eigen, lp-triples or socp-eigen (default follows --cone).
    #[arg(long)]
    mode: Option<Mode>,
    /// Triples scanned per iteration.
    #[arg(long, default_value_t = 300_000)]
    t1: usize,
    /// Triples added per iteration.
    #[arg(long, default_value_t = 5000)]
    t2: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Lower bounds on the minimum of a form over the unit sphere.
    SphereMin {
        /// Polynomial JSON file.
        #[arg(long)]
        poly: PathBuf,
        #[arg(long, default_value = "dsos")]
        cone: ConeTag,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[command(flatten)]
        pricing: Pricing,
    },
    /// Upper bounds on the stability number by column generation, or by the
    /// Cholesky outer sequence with --outer.
    StableSet {
        /// DIMACS edge file.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "dsos")]
        cone: ConeTag,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long)]
        outer: bool,
        #[command(flatten)]
        pricing: Pricing,
    },
    /// Stability-number bound from the r-dsos/r-sdsos hierarchy.
    StableSetRdsos {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "dsos")]
        cone: ConeTag,
        #[arg(long, default_value_t = 0)]
        r: u32,
    },
    /// Tries to refute a partition instance.
    Partition {
        /// Positive integers; read from --file when absent.
        values: Vec<u64>,
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value = "dsos")]
        cone: ConeTag,
        #[arg(long, default_value_t = 10)]
        iters: usize,
    },
    /// Lower bounds on a polynomial program by the Pólya-type hierarchy.
    PopPolya {
        /// POP JSON file.
        #[arg(long)]
        pop: PathBuf,
        #[arg(long, default_value_t = 3)]
        rmax: u32,
        #[arg(long, default_value_t = 1e-3)]
        bisect_eps: f64,
        /// Search for a dsos/sdsos multiplier instead of inspecting coefficients.
        #[arg(long)]
        multiplier: bool,
        #[arg(long, default_value = "dsos")]
        cone: ConeTag,
        /// Lower end of the bisection bracket.
        #[arg(long, allow_hyphen_values = true)]
        lo: Option<f64>,
        /// Upper end of the bisection bracket.
        #[arg(long, allow_hyphen_values = true)]
        hi: Option<f64>,
    },
    /// Difference-of-convex decomposition of a polynomial.
    Dcd {
        #[arg(long)]
        poly: PathBuf,
        #[arg(long, default_value = "dsos")]
        cone: ConeTag,
    },
    /// Solves a conic program given as JSON.
    SolveConic {
        #[arg(long)]
        program: PathBuf,
    },
}

enum Failure {
    Input(String),
    Solver(String),
}

impl From<io::InputError> for Failure {
    fn from(e: io::InputError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<AppError> for Failure {
    fn from(e: AppError) -> Self {
        match e {
            AppError::Input(_) | AppError::Poly(_) => Failure::Input(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

impl From<PolyaError> for Failure {
    fn from(e: PolyaError) -> Self {
        match e {
            PolyaError::Instance(_) | PolyaError::Poly(_) => Failure::Input(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn mode(p: &Pricing, cone: ConeTag) -> Mode {
    p.mode.unwrap_or(apps::mode_for(cone))
}

fn cone_name(c: ConeTag) -> &'static str {
    match c {
        ConeTag::DD => "dsos",
        ConeTag::SDD => "sdsos",
    }
}

fn replay(cert: &GramCertificate, target: &Polynomial, what: &str) -> Result<(), Failure> {
    cert.validate(target).map_err(|e| Failure::Solver(format!("{what} certificate failed replay: {e}")))
}

fn unit_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nz > 1e-3 && nz <= 1.0 {
            return z.into_iter().map(|v| v / nz).collect();
        }
    }
}

fn run(cli: &Cli) -> Result<Value, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    Ok(match &cli.command {
        Command::SphereMin { poly, cone, iters, pricing } => {
            let p = io::parse_polynomial(&read(poly)?)?;
            let m = mode(pricing, *cone);
            let opts = ColGenOptions { mode: m, iters: *iters, t1: pricing.t1, t2: pricing.t2, ..Default::default() };
            let res = apps::sphere_min_with(&p, &opts)?;
            eprintln!("sphere-min: {} iterations, bound {:.6}", res.bounds.len(), res.bounds.last().unwrap_or(&f64::NAN));
            let mut out = json!({
                "instance": {"polynomial": p},
                "params": {"cone": cone_name(*cone), "mode": format!("{m:?}"), "iters": iters, "t1": pricing.t1, "t2": pricing.t2},
                "bounds": res.bounds,
                "log": res.log,
            });
            if cli.verify {
                let sampled = (0..10_000)
                    .map(|_| p.eval(&unit_point(&mut rng, p.nvars())).unwrap_or(f64::INFINITY))
                    .fold(f64::INFINITY, f64::min);
                let best = res.bounds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if best > sampled + 1e-6 {
                    return Err(Failure::Solver(format!("bound {best} exceeds a sampled value {sampled}")));
                }
                out["verify"] = json!({"sampled_min": sampled});
            }
            out
        }
        Command::StableSet { graph, cone, iters, outer, pricing } => {
            let g = io::parse_dimacs(&read(graph)?)?;
            let (bounds, log, params) = if *outer {
                let b = apps::stable_set_outer(&g, *cone, *iters)?;
                (b, Value::Null, json!({"cone": cone_name(*cone), "iters": iters, "method": "outer"}))
            } else {
                let m = mode(pricing, *cone);
                let opts = ColGenOptions { mode: m, iters: *iters, t1: pricing.t1, t2: pricing.t2, ..Default::default() };
                let res = apps::stable_set_copositive_with(&g, &opts)?;
                let params = json!({"cone": cone_name(*cone), "iters": iters, "method": "column-generation", "mode": format!("{m:?}"), "t1": pricing.t1, "t2": pricing.t2});
                (res.bounds, serde_json::to_value(&res.log).unwrap_or(Value::Null), params)
            };
            eprintln!("stable-set: bounds {:.4?}", bounds);
            let mut out = json!({
                "instance": {"nodes": g.n, "edges": g.edges().len()},
                "params": params,
                "bounds": bounds,
            });
            if !log.is_null() {
                out["log"] = log;
            }
            out
        }
        Command::StableSetRdsos { graph, cone, r } => {
            let g = io::parse_dimacs(&read(graph)?)?;
            let bound = apps::stable_set_rdsos(&g, *r, *cone)?;
            eprintln!("stable-set-rdsos: r={r} bound {bound:.6}");
            json!({
                "instance": {"nodes": g.n, "edges": g.edges().len()},
                "params": {"cone": cone_name(*cone), "r": r},
                "bounds": [bound],
            })
        }
        Command::Partition { values, file, cone, iters } => {
            let a = match (values.is_empty(), file) {
                (false, None) => values.clone(),
                (true, Some(f)) => io::parse_partition(&read(f)?)?,
                (false, Some(_)) => return Err(Failure::Input("give either values or --file, not both".into())),
                (true, None) => return Err(Failure::Input("no partition values given".into())),
            };
            if a.contains(&0) {
                return Err(Failure::Input("partition entries must be positive".into()));
            }
            let res = apps::partition_refute(&a, *cone, *iters)?;
            let margin = apps::partition_nonhomogeneous_margin(&a, *cone)?;
            eprintln!(
                "partition: refuted={} best eps {:.3e}, non-homogeneous program {}",
                res.refuted,
                res.eps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                if margin < 0.0 { "infeasible" } else { "feasible" }
            );
            if cli.verify {
                if let (Some(cert), Some(&eps)) = (&res.certificate, res.eps.last()) {
                    let (ph, h) = apps::partition_forms(&a);
                    replay(cert, &ph.try_sub(&h.scale(eps)).map_err(AppError::from)?, "partition")?;
                }
            }
            json!({
                "instance": {"values": a},
                "params": {"cone": cone_name(*cone), "iters": iters},
                "bounds": res.eps,
                "refuted": res.refuted,
                "nonhomogeneous_margin": margin,
                "nonhomogeneous_feasible": margin >= 0.0,
                "certificates": res.certificate.map(|c| vec![c]),
            })
        }
        Command::PopPolya { pop, rmax, bisect_eps, multiplier, cone, lo, hi } => {
            let inst = io::parse_pop(&read(pop)?)?;
            let (dlo, dhi) = polya::default_bracket(&inst);
            let bracket = (lo.unwrap_or(dlo), hi.unwrap_or(dhi));
            let variant = if *multiplier { Variant::Multiplier(*cone) } else { Variant::Pol };
            let res = polya::run(&inst, *rmax, Some(bracket), *bisect_eps, variant)?;
            for lv in &res.levels {
                let note = if lv.unevaluated { " (unevaluated: term limit)" } else { "" };
                eprintln!("pop-polya: r={} l_r={}{note}", lv.r, lv.value);
            }
            if cli.verify {
                let b = polya::bounds(&inst);
                for lv in &res.levels {
                    for t in lv.tests.iter().filter(|t| t.outcome == Membership::Member) {
                        let f = polya::build_f_gamma(&inst, &b, t.gamma)?;
                        let floor = 0.5 / lv.r as f64 - 1e-6;
                        for _ in 0..1000 {
                            let z = unit_point(&mut rng, f.nvars());
                            let v = f.eval(&z).map_err(PolyaError::from)?;
                            if v < floor {
                                return Err(Failure::Solver(format!(
                                    "accepted gamma {} at r={} fails the sphere check ({v} < {floor})",
                                    t.gamma, lv.r
                                )));
                            }
                        }
                    }
                }
            }
            json!({
                "instance": inst,
                "params": {"rmax": rmax, "bisect_eps": bisect_eps, "bracket": [bracket.0, bracket.1], "variant": variant},
                "bounds": res.l,
                "running_max": res.m,
                "levels": res.levels,
            })
        }
        Command::Dcd { poly, cone } => {
            let f = io::parse_polynomial(&read(poly)?)?;
            let res = apps::dcd(&f, *cone)?;
            eprintln!("dcd: objective {:.6}", res.objective);
            if cli.verify {
                replay(&res.g_certificate, &res.g.hessian_biform(), "g")?;
                replay(&res.h_certificate, &res.h.hessian_biform(), "h")?;
            }
            json!({
                "instance": {"polynomial": f},
                "params": {"cone": cone_name(*cone)},
                "bounds": [res.objective],
                "g": res.g,
                "h": res.h,
                "certificates": [res.g_certificate, res.h_certificate],
            })
        }
        Command::SolveConic { program } => {
            let text = read(program)?;
            let prog: ConeProgram = serde_json::from_str(&text).map_err(|e| Failure::Input(format!("line {}: {e}", e.line())))?;
            check_program(&prog)?;
            let sol = conic::solve(&prog);
            eprintln!("solve-conic: {:?} after {} iterations, objective {}", sol.status, sol.iterations, sol.primal_objective);
            let mut out = json!({
                "instance": {"rows": prog.nrows, "vars": prog.nvars()},
                "params": {},
                "bounds": [sol.primal_objective],
                "solution": sol,
            });
            if cli.verify {
                out["verify"] = serde_json::to_value(conic::verify(&prog, &sol)).unwrap_or(Value::Null);
            }
            if !sol.is_optimal() {
                print_result(cli, &out)?;
                return Err(Failure::Solver(format!("solver finished with status {:?}", sol.status)));
            }
            out
        }
    })
}

fn check_program(p: &ConeProgram) -> Result<(), Failure> {
    let n = p.nvars();
    if p.c.len() != n || p.b.len() != p.nrows {
        return Err(Failure::Input("dimensions of c, b and the columns disagree".into()));
    }
    if p.cones.iter().map(|c| c.size()).sum::<usize>() != n {
        return Err(Failure::Input("cone sizes do not add up to the variable count".into()));
    }
    if p.cols.iter().flatten().any(|&(r, _)| r >= p.nrows) {
        return Err(Failure::Input("a column refers to a row out of range".into()));
    }
    Ok(())
}

fn print_result(cli: &Cli, out: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(out).map_err(|e| Failure::Solver(e.to_string()))?;
    match &cli.out {
        Some(path) => fs::write(path, text + "\n").map_err(|e| Failure::Input(format!("{}: {e}", path.display()))),
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Input(format!("stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.dump_conic.is_some() {
        conic::start_recording();
    }
    let start = Instant::now();
    let result = run(&cli);
    if let Some(path) = &cli.dump_conic {
        let listings = conic::take_recording();
        let text: String = listings.iter().enumerate().map(|(k, l)| format!("# program {k}\n{l}\n")).collect();
        if let Err(e) = fs::write(path, text) {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    let outcome = result.and_then(|mut out| {
        out["wall_ms"] = json!(start.elapsed().as_secs_f64() * 1e3);
        print_result(&cli, &out)
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
