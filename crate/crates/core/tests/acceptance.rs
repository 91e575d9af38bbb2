//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fail. Monte Carlo criteria run at desk scale (R = 2000 for calibration and
//! fixed studies, R = 500 per size in the timing sweep) on fixed seeds.

use std::time::Instant;

use basket_core::inference::fit;
use basket_core::model::logit;
use basket_core::output::write_oc;
use basket_core::simulator::SweepPoint;
use basket_core::stream::keys;
use basket_core::*;
use rand::Rng;

const MASTER: u64 = 20_240_601;
const R: usize = 2_000;
const SWEEP_R: usize = 500;

struct Report {
    failed: usize,
    total: usize,
}

impl Report {
    fn check(&mut self, id: &str, what: &str, pass: bool, detail: String) {
        self.total += 1;
        if !pass {
            self.failed += 1;
        }
        println!("{} [{id}] {what}: {detail}", if pass { "PASS" } else { "FAIL" });
    }

    fn info(&self, id: &str, detail: String) {
        println!("     [{id}] {detail}");
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
}

fn scenario(design: &TrialDesign, label: &str) -> Scenario {
    standard_scenarios(design).into_iter().find(|s| s.label == label).unwrap()
}

fn scenarios(design: &TrialDesign, range: std::ops::RangeInclusive<usize>) -> Vec<Scenario> {
    range.map(|i| scenario(design, &format!("Sc {i}"))).collect()
}

fn oc<'a>(ocs: &'a [OperatingCharacteristics], sc: &str, a: ApproachKind, m: CalibrationMethod) -> &'a OperatingCharacteristics {
    ocs.iter().find(|o| o.scenario == sc && o.approach == a && o.method == m).unwrap()
}

fn cut(sets: &[CutoffSet], a: ApproachKind) -> &CutoffSet {
    sets.iter().find(|s| s.approach == a).unwrap()
}

fn criterion_1(rep: &mut Report) {
    let (m, v) = nex_params(0.3).unwrap();
    let pass = format!("{m:.4}") == "-0.8473" && format!("{v:.4}") == "4.7619";
    rep.check("1", "NEX hyperparameters for rho = 0.3", pass, format!("({m:.4}, {v:.4})"));
}

fn criterion_2(rep: &mut Report) {
    let mut rng = StreamSeed::new(MASTER).child(2).rng();
    let priors = PriorSpec::reference(0.2, 1);
    let mcmc = McmcSettings { burn_in: 5_000, samples: 20_000, ..Default::default() };
    let mut worst: f64 = 0.0;
    for case in 0..50u64 {
        let n = rng.random_range(1..=30u32);
        let y = rng.random_range(0..=n);
        let data = BasketData::new(vec![y], vec![n]).unwrap();
        let mc = fit_independent(&data, &priors, 0.2, &mcmc, StreamSeed::new(MASTER).child(case)).unwrap();
        let exact = oracle_independent(y, n, logit(0.2), 100.0, 0.2).unwrap();
        worst = worst.max((mc.prob_exceed_null[0] - exact).abs());
    }
    rep.check("2", "independent MCMC vs quadrature, 50 cases", worst < 0.015, format!("max |diff| = {worst:.4} (< 0.015)"));
}

fn criterion_3(rep: &mut Report) {
    let design = TrialDesign::paper_4plus1();
    let mcmc = McmcSettings { burn_in: 5_000, samples: 200_000, ..Default::default() };
    let mut rng = StreamSeed::new(MASTER).child(3).rng();
    let all: Vec<usize> = (0..5).collect();
    let (mut worst_bhm, mut worst_nex): (f64, f64) = (0.0, 0.0);
    for case in 0..20u64 {
        let y: Vec<u32> = design
            .n
            .iter()
            .map(|&n| {
                let p = [0.2, 0.3, 0.4][rng.random_range(0..3)];
                (0..n).filter(|_| rng.random::<f64>() < p).count() as u32
            })
            .collect();
        let data = BasketData::new(y.clone(), design.n.clone()).unwrap();
        let s = StreamSeed::new(MASTER).child(300 + case);

        let mut ex = design.priors.clone();
        ex.pi = vec![1.0; 5];
        let exnex = fit(&ModelKind::Exnex(all.clone()), &data, &ex, 0.2, &mcmc, s.child(1)).unwrap();
        let bhm = fit_bhm(&data, &design.priors, 0.2, &mcmc, s.child(2)).unwrap();
        for k in 0..5 {
            worst_bhm = worst_bhm.max((exnex.prob_exceed_null[k] - bhm.prob_exceed_null[k]).abs());
        }

        let mut nex = design.priors.clone();
        nex.pi = vec![0.0; 5];
        let exnex = fit(&ModelKind::Exnex(all.clone()), &data, &nex, 0.2, &mcmc, s.child(3)).unwrap();
        for k in 0..5 {
            let (m, v) = nex_params(nex.nex_guess[k]).unwrap();
            let exact = oracle_independent(y[k], design.n[k], m, v, 0.2).unwrap();
            worst_nex = worst_nex.max((exnex.prob_exceed_null[k] - exact).abs());
        }
    }
    rep.check("3a", "EXNEX with pi = 1 vs BHM, 20 datasets", worst_bhm < 0.015, format!("max |diff| = {worst_bhm:.4} (< 0.015)"));
    rep.check("3b", "EXNEX with pi = 0 vs NEX quadrature, 20 datasets", worst_nex < 0.015, format!("max |diff| = {worst_nex:.4} (< 0.015)"));
}

struct Calibrated {
    rcap: Vec<CutoffSet>,
    global: Vec<CutoffSet>,
}

fn criterion_4(rep: &mut Report, design: &TrialDesign) -> Calibrated {
    use ApproachKind::*;
    let stream = StreamSeed::new(MASTER).child(keys::CALIBRATION);
    let approaches = [IndA, Unpl, Pl1, Pl2];
    let rcap_spec = CalibrationSpec::rcap(scenarios(design, 1..=5), R, 0.1);
    let rcap = calibrate_many(&rcap_spec, design, &approaches, stream).unwrap();
    let gn_spec = CalibrationSpec::global_null(design, R);
    let global = calibrate_many(&gn_spec, design, &approaches, stream).unwrap();

    let table3 = [
        (IndA, (0.8599, 0.8998), (0.9030, 0.8989)),
        (Unpl, (0.8599, 0.8599), (0.9030, 0.9030)),
        (Pl1, (0.8566, 0.8409), (0.9034, 0.9021)),
        (Pl2, (0.8599, 0.8409), (0.9030, 0.9021)),
    ];
    for (a, gn, rc) in table3 {
        let g = cut(&global, a);
        let r = cut(&rcap, a);
        rep.info(
            "4",
            format!(
                "{a:<5} global null ({:.4}, {:.4}) ref ({:.4}, {:.4}) | rcap ({:.4}, {:.4}) ref ({:.4}, {:.4})",
                g.delta[0], g.delta[4], gn.0, gn.1, r.delta[0], r.delta[4], rc.0, rc.1
            ),
        );
    }
    let ind = cut(&rcap, IndA);
    rep.check(
        "4a",
        "IND robust cutoffs vs (0.9030, 0.8989) +/- 0.020",
        within(ind.delta[0], 0.9030, 0.02) && within(ind.delta[4], 0.8989, 0.02),
        format!("({:.4}, {:.4})", ind.delta[0], ind.delta[4]),
    );
    let pl1 = cut(&global, Pl1);
    rep.check(
        "4b",
        "PL1 global-null cutoffs vs (0.8566, 0.8409) +/- 0.020",
        within(pl1.delta[0], 0.8566, 0.02) && within(pl1.delta[4], 0.8409, 0.02),
        format!("({:.4}, {:.4})", pl1.delta[0], pl1.delta[4]),
    );
    Calibrated { rcap, global }
}

fn criteria_5_6(rep: &mut Report, design: &TrialDesign, cal: &Calibrated) {
    use ApproachKind::*;
    use CalibrationMethod::{GlobalNull, Rcap};
    let arms = vec![
        cut(&cal.rcap, IndA).clone(),
        cut(&cal.rcap, Pl1).clone(),
        cut(&cal.rcap, Pl2).clone(),
        cut(&cal.global, Pl1).clone(),
        cut(&cal.global, Pl2).clone(),
    ];
    let sc = [scenario(design, "Sc 1"), scenario(design, "Sc 5"), scenario(design, "Sc 6")];
    let ocs = run_fixed_study(design, &arms, &sc, R, StreamSeed::new(MASTER).child(keys::SIMULATION)).unwrap();

    let ind1 = oc(&ocs, "Sc 1", IndA, Rcap);
    let target = [6.33, 6.52, 6.42, 6.46, 9.82];
    let ok = ind1.pct_reject.iter().zip(target).all(|(x, t)| within(*x, t, 1.5));
    rep.check("5a", "Sc 1 IND rejection (6.33, 6.52, 6.42, 6.46, 9.82) +/- 1.5", ok, fmt(&ind1.pct_reject));
    rep.check("5b", "Sc 1 IND FWER 29.37 +/- 2.5", within(ind1.fwer, 29.37, 2.5), format!("{:.2}", ind1.fwer));
    let ok = (0..4).all(|b| within(ind1.mean_estimate[b], 0.202, 0.01) && within(ind1.sd_estimate[b], 0.068, 0.01));
    rep.check(
        "5c",
        "Sc 1 IND existing estimates 0.202 (0.068) +/- 0.01",
        ok,
        format!("means {} sds {}", fmt3(&ind1.mean_estimate[..4]), fmt3(&ind1.sd_estimate[..4])),
    );
    let pl1_6 = oc(&ocs, "Sc 6", Pl1, Rcap).pct_reject[4];
    let ind_6 = oc(&ocs, "Sc 6", IndA, Rcap).pct_reject[4];
    rep.check(
        "5d",
        "Sc 6 new-basket power PL1 72.52 and IND 65.03 +/- 2.5, gain >= 4",
        within(pl1_6, 72.52, 2.5) && within(ind_6, 65.03, 2.5) && pl1_6 - ind_6 >= 4.0,
        format!("PL1 {pl1_6:.2}, IND {ind_6:.2}"),
    );
    let ind_5 = oc(&ocs, "Sc 5", IndA, Rcap).pct_reject[4];
    let pl2_5 = oc(&ocs, "Sc 5", Pl2, Rcap).pct_reject[4];
    rep.check(
        "5e",
        "Sc 5 new-basket error IND 9.82 +/- 1.5, PL2 13.17 +/- 2",
        within(ind_5, 9.82, 1.5) && within(pl2_5, 13.17, 2.0),
        format!("IND {ind_5:.2}, PL2 {pl2_5:.2}"),
    );

    let gn: Vec<f64> = [Pl1, Pl2].iter().map(|&a| oc(&ocs, "Sc 5", a, GlobalNull).pct_reject[4]).collect();
    let rc: Vec<f64> = [Pl1, Pl2].iter().map(|&a| oc(&ocs, "Sc 5", a, Rcap).pct_reject[4]).collect();
    rep.check(
        "6",
        "Sc 5 new-basket error PL1/PL2: global null > 20, robust < 16",
        gn.iter().all(|&x| x > 20.0) && rc.iter().all(|&x| x < 16.0),
        format!("global null ({}), robust ({})", fmt(&gn), fmt(&rc)),
    );
}

fn fmt3(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

fn existing_mean(design: &TrialDesign, oc: &OperatingCharacteristics) -> f64 {
    design.existing().map(|b| oc.pct_reject[b]).sum::<f64>() / design.k0 as f64
}

fn criterion_7(rep: &mut Report, design: &TrialDesign) {
    use ApproachKind::*;
    let sizes = [4u32, 8, 14, 20, 24];
    let spec = CalibrationSpec::rcap(scenarios(design, 1..=5), SWEEP_R, 0.1);
    let eval = [scenario(design, "Sc 1"), scenario(design, "Sc 5"), scenario(design, "Sc 6")];
    let points: Vec<SweepPoint> =
        run_timing_sweep(design, &[Pl1, Pl2, IndA], &sizes, &spec, &eval, SWEEP_R, StreamSeed::new(MASTER).child(7))
            .unwrap();
    let get = |n: u32, sc: &str, a: ApproachKind| {
        points.iter().find(|p| p.n_new == n).unwrap().oc.iter().find(|o| o.scenario == sc && o.approach == a).unwrap()
    };

    let power: Vec<f64> = sizes.iter().map(|&n| get(n, "Sc 6", Pl1).pct_reject[4]).collect();
    rep.check(
        "7a",
        "PL1 Sc 6 new-basket power gains >= 10 points from n = 4 to 24",
        power[4] - power[0] >= 10.0,
        format!("power by n ({})", fmt(&power)),
    );

    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for a in [Pl1, Pl2] {
        for sc in ["Sc 1", "Sc 5", "Sc 6"] {
            let v: Vec<f64> = sizes.iter().map(|&n| existing_mean(design, get(n, sc, a))).collect();
            let range = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
            worst = worst.max(range);
            detail.push(format!("{a} {sc}: {range:.2}"));
        }
    }
    rep.check("7b", "PL1/PL2 existing %reject range across n <= 3 points", worst <= 3.0, detail.join("; "));

    // at n = 24 every basket has the same size, so one shared cutoff comes from basket 5
    let pl1_delta: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let p = points.iter().find(|p| p.n_new == n).unwrap();
            p.cutoffs.iter().find(|c| c.approach == Pl1).unwrap().delta[0]
        })
        .collect();
    let below: Vec<String> = ["Sc 1", "Sc 5", "Sc 6"]
        .iter()
        .map(|sc| {
            let v: Vec<f64> = sizes[..4].iter().map(|&n| existing_mean(design, get(n, sc, Pl1))).collect();
            let range = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
            format!("{sc}: {range:.2}")
        })
        .collect();
    rep.info(
        "7b",
        format!(
            "PL1 existing cutoff by n ({}); PL1 range over n < 24: {}",
            pl1_delta.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>().join(", "),
            below.join("; ")
        ),
    );

    let constant = ["Sc 1", "Sc 5", "Sc 6"].iter().all(|sc| {
        let first = &get(sizes[0], sc, IndA).pct_reject[..4];
        sizes.iter().all(|&n| &get(n, sc, IndA).pct_reject[..4] == first)
    });
    rep.check("7c", "IND_a existing %reject exactly constant across n", constant, format!("{constant}"));
}

fn criterion_8(rep: &mut Report) {
    use ApproachKind::*;
    let design = TrialDesign::paper_2plus2();
    let spec = CalibrationSpec::rcap(scenarios(&design, 1..=8), R, 0.1);
    let res = run_two_plus_two_study(
        &design,
        &[IndA, IndB],
        &spec,
        &[scenario(&design, "Sc 9")],
        R,
        StreamSeed::new(MASTER).child(8),
    )
    .unwrap();
    let power = |a: ApproachKind| {
        let o = res.oc.iter().find(|o| o.approach == a).unwrap();
        (o.pct_reject[2] + o.pct_reject[3]) / 2.0
    };
    let (a, b) = (power(IndA), power(IndB));
    rep.info("8", format!("cutoffs IND_a {} | IND_b {}", fmt3(&res.cutoffs[0].delta), fmt3(&res.cutoffs[1].delta)));
    rep.check(
        "8",
        "2+2 all-effective new-basket power IND_b exceeds IND_a by >= 2 (ref 70.6 vs 66.2)",
        b - a >= 2.0,
        format!("IND_b {b:.2}, IND_a {a:.2}"),
    );
}

fn criterion_9(rep: &mut Report, design: &TrialDesign, cal: &Calibrated) {
    let arms = cal.rcap.clone();
    let sc = scenarios(design, 1..=2);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let ocs = pool.install(|| run_fixed_study(design, &arms, &sc, 300, StreamSeed::new(MASTER).child(9)).unwrap());
        let mut buf = Vec::new();
        write_oc(&mut buf, "fixed", &ocs, MASTER).unwrap();
        buf
    };
    let (one, eight) = (run(1), run(8));
    rep.check("9", "fixed-study CSV identical with 1 and 8 threads", one == eight, format!("{} bytes", one.len()));
}

fn criterion_10(rep: &mut Report, design: &TrialDesign, cal: &Calibrated) {
    let set = cut(&cal.rcap, ApproachKind::IndA).clone();
    let sc = scenarios(design, 1..=5);
    let ocs = run_fixed_study(design, &[set], &sc, R, StreamSeed::new(MASTER).child(keys::CALIBRATION)).unwrap();
    let mut cells = Vec::new();
    for (s, o) in sc.iter().zip(&ocs) {
        for b in 0..design.k() {
            if s.p[b] <= design.q0 {
                cells.push(o.pct_reject[b]);
            }
        }
    }
    let avg = cells.iter().sum::<f64>() / cells.len() as f64;
    let tol = 100.0 / R as f64 + 150.0 / (R as f64).sqrt();
    rep.check(
        "10",
        "type I error averaged over calibration cells equals alpha",
        within(avg, 10.0, tol),
        format!("{avg:.2}% over {} cells (10 +/- {tol:.2})", cells.len()),
    );
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let start = Instant::now();
    let mut rep = Report { failed: 0, total: 0 };
    let design = TrialDesign::paper_4plus1();

    criterion_1(&mut rep);
    criterion_2(&mut rep);
    criterion_3(&mut rep);
    let cal = criterion_4(&mut rep, &design);
    criteria_5_6(&mut rep, &design, &cal);
    criterion_7(&mut rep, &design);
    criterion_8(&mut rep);
    criterion_9(&mut rep, &design, &cal);
    criterion_10(&mut rep, &design, &cal);

    println!(
        "acceptance: {} of {} checks passed in {:.0} s",
        rep.total - rep.failed,
        rep.total,
        start.elapsed().as_secs_f64()
    );
    if rep.failed > 0 {
        std::process::exit(1);
    }
}
