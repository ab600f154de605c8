use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use brinkman_hdg::hybrid::{direct_assemble_solve, solution_dump};
use brinkman_hdg::verify::{
    base_subdivisions, field_discrepancy, format_sci, run_convergence_on, StudyOptions,
};
use brinkman_hdg::{
    make_case, solve, CellKind, ManufacturedCase, Mesh, Point, SourceData, SpaceSet, TriangleSplit,
};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

/// Environment variable holding the worker thread count.
const THREADS_VAR: &str = "BRINKMAN_HDG_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "brinkman-hdg",
    version,
    about = "HDG solver for the Brinkman equations on the unit square"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a convergence study on uniformly refined meshes and print the error table.
    Solve(SolveArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Manufactured test case (1, 2 or 3).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3), conflicts_with_all = ["nu", "gamma", "m"])]
    test: Option<u8>,
    /// Viscosity of a custom case.
    #[arg(long, requires_all = ["gamma", "m"], allow_negative_numbers = true)]
    nu: Option<f64>,
    /// Darcy coefficient of a custom case.
    #[arg(long, requires_all = ["nu", "m"], allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Pressure wave number of a custom case.
    #[arg(long, requires_all = ["nu", "gamma"])]
    m: Option<u32>,
    /// Cell kind.
    #[arg(long, value_enum)]
    cells: Cells,
    /// Polynomial degree.
    #[arg(long)]
    k: usize,
    /// Number of uniform refinement levels starting from the base mesh.
    #[arg(long, conflicts_with = "n")]
    levels: Option<usize>,
    /// Explicit subdivisions per side, comma separated (e.g. 8,16,32).
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Diagonal pattern of triangle meshes.
    #[arg(long, value_enum, default_value_t = Split::Alternating)]
    split: Split,
    /// Quadrature degree for the source data (default 2k+6).
    #[arg(long)]
    quad_degree: Option<usize>,
    /// Also solve the coarsest level with the monolithic system and report the discrepancy.
    #[arg(long)]
    check_oracle: bool,
    /// Write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the table as markdown.
    #[arg(long)]
    markdown: Option<PathBuf>,
    /// Write coefficients and point samples of the finest solution.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Sample points per side in the solution dump.
    #[arg(long, default_value_t = 16)]
    dump_samples: usize,
    /// Allow degrees outside the tested range.
    #[arg(long)]
    any_k: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Cells {
    Quad,
    Tri,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Split {
    Diagonal,
    AntiDiagonal,
    Alternating,
}

impl From<Split> for TriangleSplit {
    fn from(s: Split) -> Self {
        match s {
            Split::Diagonal => TriangleSplit::Diagonal,
            Split::AntiDiagonal => TriangleSplit::AntiDiagonal,
            Split::Alternating => TriangleSplit::Alternating,
        }
    }
}

fn solve_command() -> clap::Command {
    let mut cmd = Cli::command();
    cmd.build();
    cmd.find_subcommand("solve")
        .expect("solve subcommand")
        .clone()
}

fn usage_error(kind: ErrorKind, msg: impl std::fmt::Display) -> ExitCode {
    let _ = solve_command().error(kind, msg).print();
    ExitCode::from(2)
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", solve_command().render_usage());
            }
            return ExitCode::from(2);
        }
    };
    if let Err(msg) = configure_threads() {
        return usage_error(ErrorKind::InvalidValue, msg);
    }
    match cli.command {
        Command::Solve(args) => run_solve(args),
    }
}

fn run_solve(args: SolveArgs) -> ExitCode {
    let kind = match args.cells {
        Cells::Quad => CellKind::Quad,
        Cells::Tri => CellKind::Triangle,
    };
    let case = match (args.test, args.nu, args.gamma, args.m) {
        (Some(id), ..) => make_case(id),
        (None, Some(nu), Some(gamma), Some(m)) => ManufacturedCase::custom(nu, gamma, m),
        _ => {
            return usage_error(
                ErrorKind::MissingRequiredArgument,
                "either --test or all of --nu, --gamma, --m is required",
            )
        }
    };
    let case = match case {
        Ok(c) => c,
        Err(e) => return usage_error(ErrorKind::ValueValidation, e),
    };
    let tested = match kind {
        CellKind::Quad => 0..=3,
        CellKind::Triangle => 1..=3,
    };
    if !args.any_k && !tested.contains(&args.k) {
        return usage_error(
            ErrorKind::ValueValidation,
            format!(
                "--k {} is outside {}..={} for {} cells (pass --any-k to override)",
                args.k,
                tested.start(),
                tested.end(),
                kind.name()
            ),
        );
    }
    if kind == CellKind::Quad && args.k == 0 {
        eprintln!("warning: k = 0 on quads is experimental");
    }
    let ns = match (&args.n, args.levels) {
        (Some(ns), _) if !ns.is_empty() && ns.iter().all(|&n| n > 0) => ns.clone(),
        (Some(_), _) => {
            return usage_error(
                ErrorKind::ValueValidation,
                "--n needs positive subdivision counts",
            )
        }
        (None, Some(l)) if l > 0 => (0..l).map(|i| base_subdivisions(kind) << i).collect(),
        (None, Some(_)) => {
            return usage_error(ErrorKind::ValueValidation, "--levels must be positive")
        }
        (None, None) => {
            return usage_error(
                ErrorKind::MissingRequiredArgument,
                "one of --levels or --n is required",
            )
        }
    };
    let options = StudyOptions {
        rhs_degree: args.quad_degree,
        split: args.split.into(),
    };

    let table = match run_convergence_on(&case, kind, args.k, &ns, options) {
        Ok(t) => t,
        Err(e) => {
            eprintln!(
                "error: solve failed ({} cells, k = {}): {}",
                kind.name(),
                args.k,
                chain(&e)
            );
            return ExitCode::from(1);
        }
    };
    println!(
        "# {} cells, k = {}, test {}",
        kind.name(),
        args.k,
        case_label(&case)
    );
    print!("{}", table.to_markdown());

    if args.check_oracle {
        match oracle_discrepancy(&case, kind, args.k, ns[0], options) {
            Ok(d) => println!(
                "oracle discrepancy (n = {}): L {} u {} p {} uhat {} max {}",
                ns[0],
                format_sci(d[0]),
                format_sci(d[1]),
                format_sci(d[2]),
                format_sci(d[3]),
                format_sci(d.iter().fold(0.0_f64, |a, &b| a.max(b)))
            ),
            Err(e) => {
                eprintln!("error: oracle solve failed (n = {}): {}", ns[0], chain(&e));
                return ExitCode::from(1);
            }
        }
    }
    if let Some(path) = &args.dump {
        let n = *ns.last().expect("at least one level");
        let text = dump_finest(&case, kind, args.k, n, options, args.dump_samples);
        match text {
            Ok(text) => {
                if let Err(e) = fs::write(path, text) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            }
            Err(e) => {
                eprintln!("error: solution dump failed (n = {n}): {}", chain(&e));
                return ExitCode::from(1);
            }
        }
    }
    for (path, text) in [
        (&args.csv, table.to_csv()),
        (&args.markdown, table.to_markdown()),
    ] {
        if let Some(path) = path {
            if let Err(e) = fs::write(path, text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(1);
            }
        }
    }
    ExitCode::SUCCESS
}

fn case_label(case: &ManufacturedCase) -> String {
    match case.test_id {
        Some(id) => id.to_string(),
        None => format!(
            "custom (nu = {}, gamma = {}, m = {})",
            case.nu, case.gamma, case.m
        ),
    }
}

fn chain(e: &dyn std::error::Error) -> String {
    let mut out = e.to_string();
    let mut src = e.source();
    while let Some(s) = src {
        out.push_str(": ");
        out.push_str(&s.to_string());
        src = s.source();
    }
    out
}

fn data_degree(k: usize, options: StudyOptions) -> usize {
    options.rhs_degree.unwrap_or(2 * k + 6)
}

fn oracle_discrepancy(
    case: &ManufacturedCase,
    kind: CellKind,
    k: usize,
    n: usize,
    options: StudyOptions,
) -> brinkman_hdg::Result<[f64; 4]> {
    let mesh = Mesh::structured_split(n, kind, options.split)?;
    let spaces = SpaceSet::new(kind, k)?;
    let coeffs = case.coefficients();
    let f = |x: Point| case.f(x);
    let g = |x: Point| case.g(x);
    let data = SourceData {
        f: &f,
        g: &g,
        degree: data_degree(k, options),
    };
    let hybrid = solve(&mesh, &spaces, &coeffs, data, false)?;
    let direct = direct_assemble_solve(&mesh, &spaces, &coeffs, data)?;
    field_discrepancy(&mesh, &spaces, &hybrid.fields, &direct)
}

fn dump_finest(
    case: &ManufacturedCase,
    kind: CellKind,
    k: usize,
    n: usize,
    options: StudyOptions,
    samples: usize,
) -> brinkman_hdg::Result<String> {
    let mesh = Mesh::structured_split(n, kind, options.split)?;
    let spaces = SpaceSet::new(kind, k)?;
    let coeffs = case.coefficients();
    let f = |x: Point| case.f(x);
    let g = |x: Point| case.g(x);
    let data = SourceData {
        f: &f,
        g: &g,
        degree: data_degree(k, options),
    };
    let out = solve(&mesh, &spaces, &coeffs, data, true)?;
    solution_dump(&mesh, &spaces, &out.fields, samples)
}
