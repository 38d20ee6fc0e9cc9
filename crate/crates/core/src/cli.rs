//! Command-line front end. Verdicts are data: any completed analysis exits 0,
//! a solver breakdown exits 1 and a configuration problem exits 2.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::axioms::{antonelli_auto, check_ville, check_weak_axiom, check_wwa, sweep_a1_a2, sweep_b};
use crate::cheat::demonstrate_cheat_with_budget;
use crate::demand::{check_warp, solve_demand, BudgetProblem};
use crate::dynamics::{make_h2, make_pathological, simulate, stability_experiment, ImprovementSpec};
use crate::error::Error;
use crate::field::{Bundle, Field, FieldSpec};
use crate::ode::{rows_to_csv, OdeSettings};
use crate::preference::{preference_report, trace_indifference, utility, DEFAULT_BAND};
use crate::report::{to_json, write_atomic, write_json};
use crate::sampling::Region;

#[derive(Debug, Parser)]
#[command(name = "integrability", version, about = "Utility recovery, axiom tests and improvement dynamics for subjective-value fields")]
pub struct Cli {
    /// Field spec JSON file.
    #[arg(long, global = true)]
    pub field: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, global = true)]
    pub rtol: Option<f64>,
    #[arg(long, global = true)]
    pub atol: Option<f64>,
    /// Sampling box `lo,hi`.
    #[arg(long, global = true, default_value = "0.5,2")]
    pub region: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weak weak axiom, weak axiom, A1/A2, B and Ville verdicts.
    Axioms(AxiomsArgs),
    /// Recovered utility at points or on a grid, plus indifference curves.
    Utility(UtilityArgs),
    /// Compare two bundles.
    Prefer(PreferArgs),
    /// Transaction-stopping demand for one or more budgets, with a WARP check.
    Demand(DemandArgs),
    /// Stability experiment for an improvement process.
    Dynamics(DynamicsArgs),
    /// Search for a money pump and build its Ville curve.
    Cheat(CheatArgs),
    /// Field utilities.
    #[command(subcommand)]
    Field(FieldCommand),
}

#[derive(Debug, Args)]
pub struct AxiomsArgs {
    /// Random pairs for the revealed-preference axioms.
    #[arg(long, default_value_t = 2000)]
    pub pairs: usize,
    /// Random points for the differential conditions.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct UtilityArgs {
    /// Reference bundle (default: all ones).
    #[arg(long = "ref")]
    pub reference: Option<Coords>,
    /// Bundle to evaluate; repeatable.
    #[arg(long = "point")]
    pub points: Vec<Coords>,
    /// Grid resolution per axis over the region (two goods only).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Start of an indifference arc to trace; repeatable.
    #[arg(long = "trace")]
    pub traces: Vec<Coords>,
    /// Ray each arc runs to; repeatable (default: the reference ray).
    #[arg(long = "ray")]
    pub rays: Vec<Coords>,
    #[arg(long, default_value_t = 100)]
    pub trace_samples: usize,
}

#[derive(Debug, Args)]
pub struct PreferArgs {
    #[arg(long)]
    pub x: Coords,
    #[arg(long)]
    pub y: Coords,
    #[arg(long, default_value_t = DEFAULT_BAND)]
    pub band: f64,
}

#[derive(Debug, Args)]
pub struct DemandArgs {
    /// JSON list of `{"p": [...], "m": ...}` budgets.
    #[arg(long)]
    pub budgets: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<Coords>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub starts: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionChoice {
    H2,
    Pathological,
    Custom,
}

#[derive(Debug, Args)]
pub struct DynamicsArgs {
    #[arg(long, value_enum, default_value = "h2")]
    pub direction: DirectionChoice,
    /// Components of a custom direction, separated by `;`.
    #[arg(long)]
    pub components: Option<String>,
    #[arg(long)]
    pub p: Option<Coords>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub radius: f64,
    #[arg(long, default_value_t = 20)]
    pub local: usize,
    #[arg(long, default_value_t = 20)]
    pub compact: usize,
    /// Single start to simulate and export as CSV.
    #[arg(long)]
    pub start: Option<Coords>,
}

#[derive(Debug, Args)]
pub struct CheatArgs {
    /// Candidate triples to score.
    #[arg(long, default_value_t = 500)]
    pub budget: usize,
}

#[derive(Debug, Subcommand)]
pub enum FieldCommand {
    /// Value and Jacobian of the field at a point.
    Eval {
        #[arg(long)]
        point: Coords,
    },
}

/// Comma-separated coordinates such as `1,2.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coords(pub Vec<f64>);

impl std::str::FromStr for Coords {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, String> {
        text.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad number `{s}` in `{text}`")))
            .collect::<Result<_, _>>()
            .map(Coords)
    }
}

/// Why a run stopped early.
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Analysis(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Analysis(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e}"),
            Failure::Analysis(e) => write!(f, "analysis failed: {e}"),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn config<T>(r: crate::Result<T>) -> Outcome<T> {
    r.map_err(Failure::Config)
}

fn analysis<T>(r: crate::Result<T>) -> Outcome<T> {
    r.map_err(|e| match e {
        e @ (Error::Io(_) | Error::Config(_) | Error::Invalid(_)) => Failure::Config(e),
        e => Failure::Analysis(e),
    })
}

struct Context {
    field: FieldSpec,
    out: PathBuf,
    seed: u64,
    region: Region,
    settings: OdeSettings,
}

impl Context {
    fn new(cli: &Cli) -> Outcome<Self> {
        let path = cli
            .field
            .as_ref()
            .ok_or_else(|| Failure::Config(Error::Config("--field <path> is required".into())))?;
        let field = config(FieldSpec::load(path))?;
        let region = config(Region::parse(&cli.region))?;
        let mut settings = OdeSettings::default();
        if let Some(r) = cli.rtol {
            settings.rtol = r;
        }
        if let Some(a) = cli.atol {
            settings.atol = a;
        }
        config(settings.validate().map_err(|e| Error::Config(e.to_string())))?;
        Ok(Context {
            field,
            out: cli.out.clone(),
            seed: cli.seed,
            region,
            settings,
        })
    }

    fn bundle(&self, coords: &Coords) -> Outcome<Bundle> {
        let coords = coords.0.as_slice();
        if coords.len() != self.field.dim() {
            return Err(Failure::Config(Error::Dimension {
                expected: self.field.dim(),
                got: coords.len(),
            }));
        }
        config(Bundle::from_slice(coords))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Outcome {
        analysis(write_json(self.path(name), value))
    }

    fn text(&self, name: &str, text: &str) -> Outcome {
        analysis(write_atomic(self.path(name), text.as_bytes()))
    }

    fn header(&self) -> serde_json::Value {
        json!({
            "field": self.field.describe(),
            "n": self.field.dim(),
            "jacobian": self.field.jacobian_mode(),
            "seed": self.seed,
            "region": self.region,
            "settings": self.settings,
        })
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("integrability: {f}");
            f.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Outcome {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Axioms(a) => cmd_axioms(&ctx, a),
        Command::Utility(a) => cmd_utility(&ctx, a),
        Command::Prefer(a) => cmd_prefer(&ctx, a),
        Command::Demand(a) => cmd_demand(&ctx, a),
        Command::Dynamics(a) => cmd_dynamics(&ctx, a),
        Command::Cheat(a) => cmd_cheat(&ctx, a),
        Command::Field(FieldCommand::Eval { point }) => cmd_field_eval(&ctx, point),
    }
}

fn cmd_axioms(ctx: &Context, args: &AxiomsArgs) -> Outcome {
    let f = &ctx.field;
    let (r, s) = (&ctx.region, ctx.seed);
    let wwa = analysis(check_wwa(f, r, args.pairs, s))?;
    let weak = analysis(check_weak_axiom(f, r, args.pairs, s))?;
    let (a1, a2) = analysis(sweep_a1_a2(f, r, args.points, s))?;
    let b = analysis(sweep_b(f, r, args.points, s))?;
    let ville = analysis(check_ville(f, r, args.points, s))?;
    let center = Bundle::new(vec![0.5 * (r.lo + r.hi); f.dim()]).expect("positive center");
    let antonelli = antonelli_auto(f, &center).ok();
    let report = json!({
        "run": ctx.header(),
        "verdicts": [wwa, weak, a1, a2, b, ville],
        "antonelli_at_center": antonelli,
    });
    ctx.json("axioms.json", &report)
}

fn cmd_utility(ctx: &Context, args: &UtilityArgs) -> Outcome {
    let f = &ctx.field;
    let n = f.dim();
    let reference = match &args.reference {
        Some(v) => ctx.bundle(v)?,
        None => Bundle::ones(n),
    };
    let mut values = Vec::new();
    for p in &args.points {
        let x = ctx.bundle(p)?;
        let u = analysis(utility(f, &x, &reference, &ctx.settings))?;
        values.push(json!({"point": x, "u": u}));
    }
    let mut files = Vec::new();
    if let Some(k) = args.grid {
        if n != 2 {
            return Err(Failure::Config(Error::Config("--grid needs a two-good field".into())));
        }
        if k < 2 {
            return Err(Failure::Config(Error::Config("--grid needs at least 2 points per axis".into())));
        }
        let r = ctx.region;
        let axis: Vec<f64> = (0..k).map(|i| r.lo + (r.hi - r.lo) * i as f64 / (k - 1) as f64).collect();
        let pts: Vec<Bundle> = axis
            .iter()
            .flat_map(|a| axis.iter().map(move |b| Bundle::new(vec![*a, *b]).expect("positive grid")))
            .collect();
        use rayon::prelude::*;
        let us: Vec<f64> = analysis(
            pts.par_iter()
                .map(|x| utility(f, x, &reference, &ctx.settings))
                .collect::<crate::Result<_>>(),
        )?;
        let mut csv = String::from("x1,x2,u\n");
        for (x, u) in pts.iter().zip(&us) {
            csv.push_str(&format!("{},{},{}\n", x[0], x[1], u));
        }
        ctx.text("utility_grid.csv", &csv)?;
        files.push("utility_grid.csv".to_string());
    }
    let rays = if args.rays.is_empty() {
        vec![reference.clone()]
    } else {
        args.rays.iter().map(|r| ctx.bundle(r)).collect::<Outcome<_>>()?
    };
    for (i, start) in args.traces.iter().enumerate() {
        let x = ctx.bundle(start)?;
        for (j, ray) in rays.iter().enumerate() {
            let pts = analysis(trace_indifference(f, &x, ray, &ctx.settings, args.trace_samples))?;
            let name = format!("indifference_{i}_{j}.csv");
            ctx.text(&name, &rows_to_csv(pts.iter().map(|(t, p)| (*t, p.as_slice())), &[]))?;
            files.push(name);
        }
    }
    ctx.json(
        "utility.json",
        &json!({"run": ctx.header(), "reference": reference, "values": values, "files": files}),
    )
}

fn cmd_prefer(ctx: &Context, args: &PreferArgs) -> Outcome {
    let x = ctx.bundle(&args.x)?;
    let y = ctx.bundle(&args.y)?;
    let report = analysis(preference_report(&ctx.field, &x, &y, &ctx.settings, args.band))?;
    ctx.json("prefer.json", &json!({"x": x, "y": y, "band": args.band, "report": report}))
}

#[derive(Debug, Deserialize)]
struct BudgetEntry {
    p: Vec<f64>,
    m: f64,
}

fn load_budgets(path: &Path) -> Outcome<Vec<BudgetProblem>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(Error::Config(format!("{}: {e}", path.display()))))?;
    let entries: Vec<BudgetEntry> =
        serde_json::from_str(&text).map_err(|e| Failure::Config(Error::Config(e.to_string())))?;
    entries
        .into_iter()
        .map(|b| config(BudgetProblem::new(b.p, b.m)))
        .collect()
}

fn problem_from(p: &Option<Coords>, m: &Option<f64>, n: usize) -> Outcome<BudgetProblem> {
    let p = p.clone().map(|c| c.0).unwrap_or_else(|| vec![1.0; n]);
    let m = m.unwrap_or(n as f64);
    if p.len() != n {
        return Err(Failure::Config(Error::Dimension { expected: n, got: p.len() }));
    }
    config(BudgetProblem::new(p, m))
}

fn cmd_demand(ctx: &Context, args: &DemandArgs) -> Outcome {
    let n = ctx.field.dim();
    let mut problems = match &args.budgets {
        Some(path) => load_budgets(path)?,
        None => Vec::new(),
    };
    if problems.is_empty() || args.p.is_some() || args.m.is_some() {
        problems.push(problem_from(&args.p, &args.m, n)?);
    }
    let mut reports = Vec::new();
    let mut chosen = Vec::new();
    for problem in &problems {
        if problem.dim() != n {
            return Err(Failure::Config(Error::Dimension { expected: n, got: problem.dim() }));
        }
        let r = analysis(solve_demand(&ctx.field, problem, args.starts, ctx.seed))?;
        chosen.push((problem.clone(), r.x_star.clone()));
        reports.push(json!({
            "p": problem.p,
            "m": problem.m,
            "x_star": r.x_star,
            "lambda": r.lambda,
            "residuals": {"foc": r.foc_residual, "budget": r.budget_residual},
            "n_roots": r.n_roots(),
            "roots": r.multistart_roots,
        }));
    }
    let warp = analysis(check_warp(&chosen))?;
    ctx.json("demand.json", &json!({"run": ctx.header(), "demands": reports, "warp": warp}))
}

fn cmd_dynamics(ctx: &Context, args: &DynamicsArgs) -> Outcome {
    let f = &ctx.field;
    let n = f.dim();
    let problem = problem_from(&args.p, &args.m, n)?;
    let h: ImprovementSpec = match args.direction {
        DirectionChoice::H2 => config(make_h2(f, &problem))?,
        DirectionChoice::Pathological => config(make_pathological(&problem))?,
        DirectionChoice::Custom => {
            let text = args.components.as_deref().ok_or_else(|| {
                Failure::Config(Error::Config("--direction custom needs --components".into()))
            })?;
            let parts: Vec<&str> = text.split(';').map(str::trim).collect();
            config(ImprovementSpec::custom(&parts, &problem))?
        }
    };
    let reference = Bundle::ones(n);
    let report = analysis(stability_experiment(
        f,
        &h,
        &problem,
        args.radius,
        args.local,
        args.compact,
        ctx.seed,
        &ctx.settings,
        &reference,
    ))?;
    let mut single = None;
    if let Some(start) = &args.start {
        let x0 = ctx.bundle(start)?;
        let sim = analysis(simulate(f, &h, &x0, &problem, &ctx.settings, &reference, &report.x_star))?;
        ctx.text("dynamics_trajectory.csv", &sim.monitor_csv())?;
        single = Some(sim);
    }
    ctx.json("dynamics.json", &json!({"run": ctx.header(), "report": report, "simulation": single}))
}

fn cmd_cheat(ctx: &Context, args: &CheatArgs) -> Outcome {
    if ctx.field.dim() < 3 {
        return ctx.json(
            "cheat.json",
            &json!({
                "run": ctx.header(),
                "found": false,
                "candidates": 0,
                "reason": "with two goods every field satisfies Ville's axiom",
            }),
        );
    }
    let found = analysis(demonstrate_cheat_with_budget(
        &ctx.field,
        &ctx.region,
        ctx.seed,
        args.budget,
        &ctx.settings,
    ))?;
    let body = match &found {
        None => json!({"run": ctx.header(), "found": false, "candidates": args.budget}),
        Some(report) => {
            for (i, csv) in report.leg_csvs().iter().enumerate() {
                ctx.text(&format!("cheat_leg{}.csv", i + 1), csv)?;
            }
            ctx.text("ville_curve.csv", &report.curve.to_csv())?;
            let mut summary = serde_json::to_value(report).map_err(|e| Failure::Analysis(e.into()))?;
            // samples go to the CSV files
            if let Some(curve) = summary.get_mut("curve").and_then(|c| c.as_object_mut()) {
                curve.remove("samples");
            }
            json!({"run": ctx.header(), "found": true, "check": report.check(), "report": summary})
        }
    };
    ctx.json("cheat.json", &body)
}

fn cmd_field_eval(ctx: &Context, point: &Coords) -> Outcome {
    let x = ctx.bundle(point)?;
    let value = analysis(ctx.field.eval(&x))?;
    let jac = analysis(ctx.field.jacobian(&x))?;
    let matrix: Vec<Vec<f64>> = (0..jac.matrix.nrows())
        .map(|i| jac.matrix.row(i).iter().copied().collect())
        .collect();
    let body = json!({
        "run": ctx.header(),
        "point": x,
        "value": value,
        "jacobian": {"matrix": matrix, "mode": jac.mode, "steps": jac.steps},
    });
    print!("{}", analysis(to_json(&body))?);
    ctx.json("field_eval.json", &body)
}
