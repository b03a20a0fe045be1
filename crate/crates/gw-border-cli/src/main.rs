//! Command-line front end: every computation of the gw-border library as a
//! reproducible, scriptable subcommand with CSV or JSON output.
//!
//! Exit codes are part of the contract: 0 ok, 2 validation failure,
//! 3 cross-check mismatch, 4 Monte Carlo budget exhausted.

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use gw_border::border;
use gw_border::fmt::sig15;
use gw_border::oracle;
use gw_border::sampler::{self, EstimateReport, GWConfig};
use gw_border::series::rat_to_f64;
use gw_border::{Error, OffspringFamily};

const SCHEMA: &str = "gw-border/1";

const EXIT_OK: i32 = 0;
const EXIT_VALIDATION: i32 = 2;
const EXIT_MISMATCH: i32 = 3;
const EXIT_INSUFFICIENT: i32 = 4;

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Parser)]
#[command(name = "gw-border", version, about = "Distance-to-the-border statistics for size-conditioned Galton-Watson trees")]
struct Cli {
    /// Built-in family: cayley|plane|binary|motzkin|unary.
    #[arg(long, global = true, value_name = "NAME")]
    family: Option<String>,

    /// JSON file with a custom family: {"coeffs": ["1","0","1"], "egf": false}.
    #[arg(long, global = true, value_name = "PATH")]
    psi_file: Option<PathBuf>,

    /// Working truncation order (default size bound for tables).
    #[arg(long, global = true, default_value_t = 256)]
    trunc: usize,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Seed for Monte Carlo subcommands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker-thread cap; defaults to all cores. Output bytes do not
    /// depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apex tau, singularity rho, psi(tau), sigma(tau), span and the
    /// K* verdict.
    Apex,
    /// Exact coefficients A_n, A_n^(k) and their ratio up to --n-max.
    Coeffs {
        #[arg(long)]
        k: usize,
        /// Largest size; defaults to --trunc.
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// The limit constant c_k, with the closed form when one is known.
    Limit {
        #[arg(long)]
        k: usize,
    },
    /// Rejection-conditioned Monte Carlo estimate of
    /// P(border >= k | size = n).
    Simulate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        /// Accepted-sample budget.
        #[arg(long)]
        samples: usize,
        /// Tilt parameter; defaults to the apex.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, default_value_t = 400_000_000)]
        max_attempts: u64,
    },
    /// Exhaustive-enumeration cross-check of the exact coefficients;
    /// exits 3 on any mismatch.
    Oracle {
        #[arg(long)]
        n_max: usize,
        #[arg(long)]
        k: usize,
    },
    /// Mean proportion of nodes at distance >= k from every leaf.
    MeanProtected {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, default_value_t = 400_000_000)]
        max_attempts: u64,
    },
}

fn resolve_family(cli: &Cli) -> gw_border::Result<OffspringFamily> {
    match (&cli.family, &cli.psi_file) {
        (Some(name), None) => OffspringFamily::by_name(name),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidFamily(format!("cannot read {}: {e}", path.display()))
            })?;
            OffspringFamily::from_json_spec(&text)
        }
        _ => Err(Error::InvalidFamily(
            "exactly one of --family or --psi-file must be given".into(),
        )),
    }
}

fn cmd_apex(cli: &Cli, fam: &OffspringFamily) -> gw_border::Result<i32> {
    let kq = fam.apex()?;
    match cli.format {
        Format::Csv => {
            let mut out = String::from("family,tau,rho,psi_tau,sigma_tau,span,in_kstar\n");
            out.push_str(&format!(
                "{},{},{},{},{},{},true\n",
                fam.name(),
                sig15(kq.tau),
                sig15(kq.rho),
                sig15(kq.psi_tau),
                sig15(kq.sigma_tau),
                kq.span,
            ));
            print!("{out}");
        }
        Format::Json => {
            let v = json!({
                "schema": SCHEMA,
                "command": "apex",
                "family": fam.name(),
                "tau": kq.tau,
                "rho": kq.rho,
                "psi_tau": kq.psi_tau,
                "sigma_tau": kq.sigma_tau,
                "span": kq.span,
                "in_kstar": true,
            });
            println!("{v}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_coeffs(cli: &Cli, fam: &OffspringFamily, k: usize, n_max: usize) -> gw_border::Result<i32> {
    let table = border::convergence_table(fam, k, n_max)?;
    match cli.format {
        Format::Csv => print!("{}", table.to_csv()),
        Format::Json => {
            let mut v = table.to_json();
            v["schema"] = json!(SCHEMA);
            v["command"] = json!("coeffs");
            v["family"] = json!(fam.name());
            println!("{v}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_limit(cli: &Cli, fam: &OffspringFamily, k: usize) -> gw_border::Result<i32> {
    let lc = border::limit_constant(fam, k)?;
    match cli.format {
        Format::Csv => {
            let closed = lc.closed_form.map(sig15).unwrap_or_default();
            print!("k,c_k,closed_form\n{},{},{}\n", lc.k, sig15(lc.value), closed);
        }
        Format::Json => {
            let v = json!({
                "schema": SCHEMA,
                "command": "limit",
                "family": fam.name(),
                "k": lc.k,
                "c_k": lc.value,
                "closed_form": lc.closed_form,
                "trajectory": lc.trajectory,
            });
            println!("{v}");
        }
    }
    Ok(EXIT_OK)
}

fn report_csv(rep: &EstimateReport) -> String {
    let mut out = String::from(
        "n,k,p_hat,ci95,accepted,attempts,exact,exact_float,mean_protected,mean_protected_ci95,insufficient,t,seed,expected_attempts_per_accept\n",
    );
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        rep.target_n,
        rep.k,
        sig15(rep.p_hat),
        sig15(rep.ci_half_width),
        rep.accepted,
        rep.attempts,
        rep.exact_reference.as_ref().map(|r| r.to_string()).unwrap_or_default(),
        rep.exact_reference.as_ref().map(|r| sig15(rat_to_f64(r))).unwrap_or_default(),
        sig15(rep.mean_protected_fraction),
        sig15(rep.mean_protected_ci),
        rep.insufficient,
        sig15(rep.t),
        rep.seed,
        sig15(rep.expected_attempts_per_accept),
    ));
    out
}

fn print_report(cli: &Cli, fam: &OffspringFamily, command: &str, rep: &EstimateReport) {
    match cli.format {
        Format::Csv => print!("{}", report_csv(rep)),
        Format::Json => {
            let mut v = rep.to_json();
            v["schema"] = json!(SCHEMA);
            v["command"] = json!(command);
            v["family"] = json!(fam.name());
            if command == "mean-protected" {
                if let Ok(lc) = border::limit_constant(fam, rep.k) {
                    v["limit_c_k"] = json!(lc.value);
                }
            }
            println!("{v}");
        }
    }
}

fn cmd_simulate(
    cli: &Cli,
    fam: &OffspringFamily,
    command: &str,
    n: usize,
    k: usize,
    samples: usize,
    t: Option<f64>,
    max_attempts: u64,
) -> gw_border::Result<i32> {
    let mut cfg = GWConfig::new(fam.clone(), n, k, samples);
    cfg.t = t;
    cfg.seed = cli.seed;
    cfg.max_attempts = max_attempts;
    let rep = if command == "mean-protected" {
        sampler::mean_protected(&cfg)?
    } else {
        sampler::conditioned_estimate(&cfg)?
    };
    print_report(cli, fam, command, &rep);
    Ok(if rep.insufficient { EXIT_INSUFFICIENT } else { EXIT_OK })
}

fn cmd_oracle(cli: &Cli, fam: &OffspringFamily, n_max: usize, k: usize) -> gw_border::Result<i32> {
    let g = fam.solve_g(n_max.max(1));
    let gk = border::iterate_scheme(fam, k, n_max.max(1))?;
    let mut rows = Vec::new();
    let mut all_match = true;
    for n in 1..=n_max {
        let (u, v) = oracle::aggregate(fam, n, k)?;
        let matches = &u == g.coeff(n) && &v == gk.series.coeff(n);
        all_match &= matches;
        rows.push((n, u, v, matches));
    }
    match cli.format {
        Format::Csv => {
            let mut out = String::from("n,U_n,A_n,V_n,A_n_k,match\n");
            for (n, u, v, matches) in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    n,
                    u,
                    g.coeff(*n),
                    v,
                    gk.series.coeff(*n),
                    matches
                ));
            }
            out.push_str(if all_match {
                "OK: all coefficients match\n"
            } else {
                "MISMATCH: enumeration disagrees with series coefficients\n"
            });
            print!("{out}");
        }
        Format::Json => {
            let v = json!({
                "schema": SCHEMA,
                "command": "oracle",
                "family": fam.name(),
                "k": k,
                "status": if all_match { "ok" } else { "mismatch" },
                "rows": rows.iter().map(|(n, u, v, matches)| json!({
                    "n": n,
                    "u_n": u.to_string(),
                    "a_n": g.coeff(*n).to_string(),
                    "v_n": v.to_string(),
                    "a_n_k": gk.series.coeff(*n).to_string(),
                    "match": matches,
                })).collect::<Vec<_>>(),
            });
            println!("{v}");
        }
    }
    Ok(if all_match { EXIT_OK } else { EXIT_MISMATCH })
}

fn run(cli: &Cli) -> gw_border::Result<i32> {
    let fam = resolve_family(cli)?;
    match &cli.command {
        Command::Apex => cmd_apex(cli, &fam),
        Command::Coeffs { k, n_max } => {
            cmd_coeffs(cli, &fam, *k, n_max.unwrap_or(cli.trunc))
        }
        Command::Limit { k } => cmd_limit(cli, &fam, *k),
        Command::Simulate { n, k, samples, t, max_attempts } => {
            cmd_simulate(cli, &fam, "simulate", *n, *k, *samples, *t, *max_attempts)
        }
        Command::Oracle { n_max, k } => cmd_oracle(cli, &fam, *n_max, *k),
        Command::MeanProtected { n, k, samples, t, max_attempts } => {
            cmd_simulate(cli, &fam, "mean-protected", *n, *k, *samples, *t, *max_attempts)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("rayon pool is configured once, before any parallel work");
    }
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
    };
    std::process::exit(code);
}
