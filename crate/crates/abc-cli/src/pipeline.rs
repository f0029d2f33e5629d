//! Stage orchestration: plan, combinatorics, maps, towers, speed, fbar.

use std::fmt::Write as _;
use std::path::Path;

use abc_core::approximation::{
    h_bound_check, h_condition_mc, increment, rigidity_check, speed_exact, translation_continuity_mc, boundary_shell, McConfig, McVerdict,
};
use abc_core::bump::bump_audit;
use abc_core::combinatorics::{verify_combidisj, CellAssignment, StageParams, TABLE_LIMIT};
use abc_core::conjugations::{affine_norm_check, diameter_check, norm_bound_dh, stage_bumps, verify_good_domains, verify_measure_preservation};
use abc_core::fbar::{fbar_distance, ks_criterion_probe, verify_match_lemma, ProcessShape, SymbolName, TestPartition};
use abc_core::geometry::{frac, rat, to_f64, BoxUnion, Rational};
use abc_core::scheduler::{build_ladder, check_rotation_distance, no_h_check, Ladder};
use abc_core::serial::rational_json;
use abc_core::towers::{build_bases, build_columns, generating_diagnostics, measures, verify_disjointness, TowerPair};
use anyhow::Result;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{HCheck, RunConfig};
use crate::svg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Plan,
    Combinatorics,
    Maps,
    Towers,
    Speed,
    Rigidity,
    Fbar,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Plan => "plan",
            Command::Combinatorics => "combinatorics",
            Command::Maps => "maps",
            Command::Towers => "towers",
            Command::Speed => "speed",
            Command::Rigidity => "rigidity",
            Command::Fbar => "fbar",
            Command::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Violation(String),
    Inconclusive(String),
}

impl Status {
    fn worst(self, other: Status) -> Status {
        match (&self, &other) {
            (Status::Violation(_), _) => self,
            (_, Status::Violation(_)) => other,
            (Status::Inconclusive(_), _) => self,
            (_, Status::Inconclusive(_)) => other,
            _ => Status::Pass,
        }
    }

    fn from_checks(stage: &str, failed: &[String]) -> Status {
        if failed.is_empty() {
            Status::Pass
        } else {
            Status::Violation(format!("{stage}: {}", failed.join("; ")))
        }
    }
}

/// A stage report plus side files (name, contents).
#[derive(Clone, Debug)]
pub struct StageOutput {
    pub name: String,
    pub status: Status,
    pub report: Value,
    pub files: Vec<(String, String)>,
}

#[derive(Clone, Debug)]
pub struct Run {
    pub command: Command,
    pub outputs: Vec<StageOutput>,
}

impl Run {
    pub fn status(&self) -> Status {
        self.outputs.iter().fold(Status::Pass, |acc, o| acc.worst(o.status.clone()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.status() {
            Status::Pass => 0,
            Status::Violation(_) => 2,
            Status::Inconclusive(_) => 4,
        }
    }

    pub fn summary(&self) -> Value {
        let stages: Vec<Value> = self
            .outputs
            .iter()
            .map(|o| json!({ "stage": o.name, "result": o.status, "files": o.files.iter().map(|f| &f.0).collect::<Vec<_>>() }))
            .collect();
        json!({ "command": self.command.name(), "stages": stages, "exit_code": self.exit_code() })
    }

    /// Writes every report, side file and summary.json into an existing directory.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        if !dir.is_dir() {
            return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("output directory {} does not exist", dir.display())));
        }
        for o in &self.outputs {
            std::fs::write(dir.join(format!("{}.json", o.name)), pretty(&o.report))?;
            for (name, text) in &o.files {
                std::fs::write(dir.join(name), text)?;
            }
        }
        std::fs::write(dir.join("summary.json"), pretty(&self.summary()))?;
        Ok(())
    }
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("reports serialize")
}

fn ratio_str(x: &Rational) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

fn mc_config(cfg: &RunConfig, stream: u64) -> McConfig {
    McConfig { samples: cfg.mc.samples, seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add(stream), confidence: cfg.mc.confidence, strict: cfg.mc.strict }
}

/// Builds the ladder; a violated condition becomes a failed plan stage.
pub fn plan(cfg: &RunConfig) -> Result<(Option<Ladder>, StageOutput)> {
    let sched = cfg.scheduler()?;
    let built = match cfg.h_check {
        HCheck::Bound => build_ladder(&sched, h_bound_check),
        HCheck::None => build_ladder(&sched, no_h_check),
    };
    let ladder = match built {
        Ok(l) => l,
        Err(e) => {
            let out = StageOutput {
                name: "plan".into(),
                status: Status::Violation(e.to_string()),
                report: json!({ "error": e.to_string() }),
                files: vec![],
            };
            return Ok((None, out));
        }
    };
    let rot = check_rotation_distance(&ladder);
    let mut failed: Vec<String> = ladder.cert.iter().filter(|i| i.failed()).map(|i| format!("stage {} ({})", i.stage, i.condition)).collect();
    if !rot.pass {
        failed.push("rotation distance".into());
    }
    let mut table = String::from("stage | condition | lhs | rel | rhs | holds | enforced\n");
    for i in &ladder.cert {
        let _ = writeln!(
            table,
            "{} | {} | {:.6e} | {} | {:.6e} | {} | {}",
            i.stage,
            i.condition,
            to_f64(&i.lhs),
            i.relation,
            to_f64(&i.rhs),
            if i.holds { "yes" } else { "NO" },
            if i.enforced { "yes" } else { "report" }
        );
    }
    let report = json!({ "ladder": to_value(&ladder), "rotation_distance": to_value(&rot) });
    let out = StageOutput { name: "plan".into(), status: Status::from_checks("plan", &failed), report, files: vec![("plan_table.txt".into(), table)] };
    Ok((Some(ladder), out))
}

fn small(st: &StageParams, limit: u64) -> bool {
    st.lambda().to_u64().is_some_and(|l| l <= limit)
}

pub fn combinatorics(ladder: &Ladder) -> Result<StageOutput> {
    let mut stages = Vec::new();
    let mut failed = Vec::new();
    let mut files = Vec::new();
    for st in &ladder.stages {
        let ids: Vec<Value> = st.identities().into_iter().map(|(n, ok)| json!({ "identity": n, "holds": ok })).collect();
        if st.identities().iter().any(|x| !x.1) {
            failed.push(format!("stage {} identities", st.n));
        }
        let mut entry = json!({ "n": st.n, "r": st.r.to_string(), "r_prime": st.r_prime.to_string(), "identities": ids });
        if small(st, TABLE_LIMIT) {
            let rep = verify_combidisj(st)?;
            if !rep.pass {
                failed.push(format!("stage {} combinatorial disjointness", st.n));
            }
            entry["combidisj"] = to_value(&rep);
            if small(st, 10_000) {
                entry["cells"] = to_value(&CellAssignment::build(st)?);
            }
        } else {
            entry["skipped"] = json!(format!("q q' = {} exceeds the table limit {}", st.lambda(), TABLE_LIMIT));
        }
        if small(st, 2_000) {
            files.push((format!("combinatorics_n{}.svg", st.n), svg::combinatorics(Some(st))));
        }
        stages.push(entry);
    }
    Ok(StageOutput { name: "combinatorics".into(), status: Status::from_checks("combinatorics", &failed), report: json!({ "stages": stages }), files })
}

pub fn maps(ladder: &Ladder) -> Result<StageOutput> {
    let mut stages = Vec::new();
    let mut failed = Vec::new();
    for (idx, st) in ladder.stages.iter().enumerate() {
        let mp = verify_measure_preservation(st);
        let dom = verify_good_domains(st)?;
        let diam = diameter_check(st);
        let aff = affine_norm_check(st, 8);
        let bumps = bump_audit(&stage_bumps(st), 1000);
        let norm = norm_bound_dh(&ladder.stages[..=idx]);
        for (ok, what) in [(mp.pass, "measure preservation"), (dom.pass, "good domains"), (diam.holds, "diameter"), (aff.agree, "affine norms"), (bumps.pass, "bump audit")] {
            if !ok {
                failed.push(format!("stage {} {what}", st.n));
            }
        }
        stages.push(json!({
            "n": st.n,
            "measure_preservation": to_value(&mp),
            "good_domains": to_value(&dom),
            "diameter": to_value(&diam),
            "affine_norms": to_value(&aff),
            "bump_audit": to_value(&bumps),
            "norm_certificate": to_value(&norm),
        }));
    }
    Ok(StageOutput { name: "maps".into(), status: Status::from_checks("maps", &failed), report: json!({ "stages": stages }), files: vec![] })
}

fn pairs(ladder: &Ladder) -> Result<Vec<TowerPair>> {
    Ok(ladder.stages.iter().map(build_bases).collect::<abc_core::Result<Vec<_>>>()?)
}

pub fn towers(ladder: &Ladder, cfg: &RunConfig) -> Result<StageOutput> {
    let mut stages = Vec::new();
    let mut failed = Vec::new();
    let mut files = Vec::new();
    for (idx, st) in ladder.stages.iter().enumerate() {
        let pair = match build_bases(st) {
            Ok(p) => p,
            Err(e) => {
                failed.push(format!("stage {}: {e}", st.n));
                stages.push(json!({ "n": st.n, "error": e.to_string() }));
                continue;
            }
        };
        let disj = verify_disjointness(&pair);
        let meas = measures(&pair);
        let cols = build_columns(&pair)?;
        let prev = if idx == 0 { Rational::one() } else { ladder.norm_bounds[idx - 1].clone() };
        let gen = generating_diagnostics(&pair, &prev);
        let checks = [
            (pair.report.pass, "base inclusions"),
            (disj.pass, "disjointness"),
            (meas.lower_bounds_hold.iter().all(|x| *x), "measure lower bounds"),
            (meas.d2_identity != Some(false), "tower 1 measure identity"),
            (meas.enumerated_match != Some(false), "enumerated measures"),
            (cols.pass, "columns"),
            (gen.xi_floor_holds, "generating fraction"),
            (gen.diameter_condition.holds, "diameter condition"),
        ];
        for (ok, what) in checks {
            if !ok {
                failed.push(format!("stage {} {what}", st.n));
            }
        }
        stages.push(json!({
            "n": st.n,
            "heights": [pair.heights[0].to_string(), pair.heights[1].to_string()],
            "total_boxes": pair.total_boxes().to_string(),
            "bases": to_value(&pair.report),
            "disjointness": to_value(&disj),
            "measures": to_value(&meas),
            "columns": to_value(&cols),
            "generating": to_value(&gen),
        }));
        if pair.is_materialized() {
            files.push((format!("towers_n{}.svg", st.n), svg::towers(Some(&pair), cfg.svg_levels)));
        }
    }
    Ok(StageOutput { name: "towers".into(), status: Status::from_checks("towers", &failed), report: json!({ "stages": stages }), files })
}

/// Signed representative in (-1/2, 1/2].
fn centered(x: &Rational) -> Rational {
    let f = frac(x);
    if f > rat(1, 2) {
        f - Rational::one()
    } else {
        f
    }
}

pub fn rigidity(ladder: &Ladder) -> StageOutput {
    let reps: Vec<_> = ladder.stages.iter().map(rigidity_check).collect();
    let failed: Vec<String> = reps.iter().filter(|r| !r.pass).map(|r| format!("stage {}", r.n)).collect();
    StageOutput { name: "rigidity".into(), status: Status::from_checks("rigidity", &failed), report: json!({ "stages": to_value(&reps) }), files: vec![] }
}

pub fn speed(ladder: &Ladder, cfg: &RunConfig) -> Result<StageOutput> {
    let pairs = pairs(ladder)?;
    let mut status = Status::Pass;
    let mut stages = Vec::new();
    let mut csv = String::from("n,tower,exact_term,bound,ratio,mc_estimate,mc_half_width,exact_in_interval,speed_pass,h_mc_verdict\n");
    for (idx, pair) in pairs.iter().enumerate() {
        let st = &pair.stage;
        let rep = speed_exact(pair)?;
        if !rep.pass {
            status = status.worst(Status::Violation(format!("speed: stage {} speed bound", st.n)));
        }
        // the top cell comes back as C_0 translated by delta_s
        let last = pair.lambda() - 1;
        let (a, b) = abc_core::towers::rotation(st);
        let mut mc_rows = Vec::new();
        for s in [1u8, 2] {
            let c0 = pair.c0(s);
            let h = Rational::from_integer(pair.height(s).clone());
            let top = pair.c_box(s, &last)?.translate(&frac(&(&h * &a)), &frac(&(&h * &b)));
            let d1 = centered(&(top.theta1.lo.value() - c0.theta1.lo.value()));
            let d2 = centered(&(top.theta2.lo.value() - c0.theta2.lo.value()));
            let t = std::cmp::max(d1.abs(), d2.abs());
            let region = BoxUnion::new(boundary_shell(&c0, &t)?)?;
            let x = BoxUnion::new(vec![c0])?;
            let est = translation_continuity_mc(&x, (&d1, &d2), &region, None, &mc_config(cfg, 10 * st.n + s as u64))?;
            let exact = to_f64(&rep.tower_terms[(s - 1) as usize]);
            let inside = (est.estimate - exact).abs() <= est.half_width;
            if !inside {
                status = status.worst(Status::Inconclusive(format!("speed: stage {} tower {s} estimate misses the exact term", st.n)));
            }
            mc_rows.push(json!({ "tower": s, "delta": [rational_json(&d1), rational_json(&d2)], "estimate": to_value(&est), "exact_in_interval": inside }));
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{:.9e},{:.9e},{},{},",
                st.n,
                s,
                ratio_str(&rep.tower_terms[(s - 1) as usize]),
                ratio_str(&rep.tower_bounds[(s - 1) as usize]),
                ratio_str(&rep.ratio),
                est.estimate,
                est.half_width,
                inside,
                rep.pass
            );
        }
        let mut h_mc = Value::Null;
        let mut verdict = String::new();
        if idx + 1 < pairs.len() {
            if let Some(level) = pair.base(1) {
                let chain = &ladder.stages[idx + 1..];
                let lastst = chain.last().expect("nonempty chain");
                let (d1, d2) = increment(lastst);
                let budget = &lastst.eps * level.measure();
                let est = h_condition_mc(&level, chain, (&d1, &d2), &budget, &mc_config(cfg, 10 * st.n + 7))?;
                match est.verdict {
                    McVerdict::Pass => {}
                    McVerdict::Fail => status = status.worst(Status::Violation(format!("speed: stage {} sampled (H) check fails", st.n))),
                    McVerdict::Inconclusive => {
                        status = status.worst(Status::Inconclusive(format!("speed: stage {} sampled (H) check inconclusive", st.n)))
                    }
                }
                verdict = format!("{:?}", est.verdict).to_lowercase();
                h_mc = to_value(&est);
            }
        }
        let _ = writeln!(csv, "{},all,{},{},{},,,,{},{}", st.n, ratio_str(&rep.exact_wraparound_term), ratio_str(&rep.bound_error1), ratio_str(&rep.ratio), rep.pass, verdict);
        stages.push(json!({ "n": st.n, "speed": to_value(&rep), "sampled_terms": mc_rows, "h_condition_mc": h_mc }));
    }
    let rig = rigidity(ladder);
    status = status.worst(rig.status.clone());
    Ok(StageOutput {
        name: "speed".into(),
        status,
        report: json!({ "stages": stages, "rigidity": rig.report["stages"].clone() }),
        files: vec![("speed.csv".into(), csv)],
    })
}

/// Names given as comma or space separated integers, or one symbol per character.
pub fn parse_name(text: &str) -> Result<SymbolName> {
    let t = text.trim();
    let syms: Vec<u64> = if t.contains(',') || t.contains(char::is_whitespace) {
        t.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(|s| s.parse::<u64>()).collect::<std::result::Result<_, _>>()?
    } else {
        t.chars().map(|c| c as u64).collect()
    };
    Ok(SymbolName::new(syms)?)
}

pub fn fbar_pair(a: &SymbolName, b: &SymbolName) -> Result<StageOutput> {
    let f = fbar_distance(a, b)?;
    Ok(StageOutput { name: "fbar".into(), status: Status::Pass, report: json!({ "mode": "pair", "result": to_value(&f) }), files: vec![] })
}

pub fn fbar_lemma(ladder: &Ladder, cfg: &RunConfig) -> Result<StageOutput> {
    let st = &ladder.stages[0];
    let pair = build_bases(st)?;
    let shape = ProcessShape::from_reports(&pair, &speed_exact(&pair)?, &build_columns(&pair)?, &measures(&pair))?;
    let r = crate::config::parse_rational(&cfg.fbar.r)?;
    let mut csv = String::from("alpha,k,constructed,bound,exact\n");
    let mut lemmas = Vec::new();
    let mut failed = Vec::new();
    for (i, alpha) in cfg.fbar_alphas()?.iter().enumerate() {
        let rep = verify_match_lemma(&shape, alpha, &r, cfg.fbar.quadruples, cfg.seed.wrapping_add(i as u64))?;
        for q in &rep.quadruples {
            let _ = writeln!(csv, "{},{},{},{},{}", ratio_str(alpha), q.k, ratio_str(&q.constructed), ratio_str(&q.bound), ratio_str(&q.exact));
        }
        if !rep.pass {
            failed.push(format!("match lemma at alpha = {alpha}: {} violations", rep.violations));
        }
        let max_exact = rep.quadruples.iter().map(|q| q.exact.clone()).max().unwrap_or_else(Rational::zero);
        let mut v = to_value(&rep);
        if let Some(m) = v.as_object_mut() {
            m.remove("quadruples");
            m.insert("sampled".into(), json!(rep.quadruples.len()));
            m.insert("max_exact".into(), rational_json(&max_exact));
        }
        lemmas.push(v);
    }
    let parts = [TestPartition::Levels, TestPartition::Blocks(cfg.fbar.blocks), TestPartition::JunkRefining];
    let probe = ks_criterion_probe(&shape, &r, &cfg.fbar_epsilons()?, &parts, cfg.fbar.probe_pairs, cfg.seed)?;
    let report = json!({
        "mode": "lemma",
        "stage": st.n,
        "shape": to_value(&shape),
        "match_lemma": lemmas,
        "probe": to_value(&probe),
    });
    Ok(StageOutput { name: "fbar".into(), status: Status::from_checks("fbar", &failed), report, files: vec![("fbar_lemma.csv".into(), csv)] })
}

/// Runs `command` (with the plan first). Later stages are skipped when the plan fails.
pub fn run(cfg: &RunConfig, command: Command, names: Option<(SymbolName, SymbolName)>) -> Result<Run> {
    if let (Command::Fbar, Some((a, b))) = (command, &names) {
        return Ok(Run { command, outputs: vec![fbar_pair(a, b)?] });
    }
    let (ladder, plan_out) = plan(cfg)?;
    let mut outputs = Vec::new();
    let Some(ladder) = ladder else {
        return Ok(Run { command, outputs: vec![plan_out] });
    };
    let want = |c: Command| command == c || command == Command::All;
    if want(Command::Plan) {
        outputs.push(plan_out);
    }
    if want(Command::Combinatorics) {
        outputs.push(combinatorics(&ladder)?);
    }
    if want(Command::Maps) {
        outputs.push(maps(&ladder)?);
    }
    if want(Command::Towers) {
        outputs.push(towers(&ladder, cfg)?);
    }
    if want(Command::Speed) {
        outputs.push(speed(&ladder, cfg)?);
    }
    if command == Command::Rigidity {
        outputs.push(rigidity(&ladder));
    }
    if want(Command::Fbar) {
        outputs.push(fbar_lemma(&ladder, cfg)?);
    }
    Ok(Run { command, outputs })
}
