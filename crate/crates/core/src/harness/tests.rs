use super::*;
use crate::dictionary::{build_dictionary, ClusterAlgo, DictSizes, PrototypeDictionary};
use crate::error::{Error, Result};
use crate::intervention::{stagewise_wire, ScisFlags};
use crate::planner::{ModelConfig, PlannerModel, TrainConfig};
use crate::tensor::Tensor;
use crate::world::{collides, generate_dataset, generate_split, Dataset, ScenarioConfig, Scene, Split, HORIZON};
use rand::Rng;

struct Expert;

impl TrajectoryModel for Expert {
    fn plan(&self, scene: &Scene) -> Result<Vec<[f64; 2]>> {
        Ok(scene.expert.clone())
    }
    fn identity(&self) -> String {
        "expert".into()
    }
}

struct Zeros;

impl TrajectoryModel for Zeros {
    fn plan(&self, _: &Scene) -> Result<Vec<[f64; 2]>> {
        Ok(vec![[0.0; 2]; HORIZON])
    }
    fn identity(&self) -> String {
        "zeros".into()
    }
}

fn val(n: usize, seed: u64) -> Dataset {
    generate_split(&ScenarioConfig { seed, ..Default::default() }, n, Split::Val).unwrap()
}

#[test]
fn expert_oracle_has_zero_error() {
    let d = val(300, 1);
    let r = evaluate(&Expert, &d, &Condition::default()).unwrap();
    assert_eq!([r.l2_1s, r.l2_2s, r.l2_3s, r.l2_avg], [0.0; 4]);
    let expected = d.scenes.iter().filter(|s| collides(&s.expert, &s.agents)).count() as f64 / 300.0;
    assert_eq!(r.collision_rate, expected);
    assert_eq!(r.scenes, 300);
    assert_eq!(r.model_hash, "expert");
}

#[test]
fn zero_planner_error_is_mean_waypoint_norm() {
    let d = val(300, 2);
    let r = evaluate(&Zeros, &d, &Condition::default()).unwrap();
    let norm = |p: &[f64; 2]| (p[0] * p[0] + p[1] * p[1]).sqrt();
    for (k, got) in [(2, r.l2_1s), (4, r.l2_2s), (6, r.l2_3s)] {
        let want = d
            .scenes
            .iter()
            .map(|s| s.expert[..k].iter().map(norm).sum::<f64>() / k as f64)
            .sum::<f64>()
            / d.len() as f64;
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn report_invariants_and_determinism() {
    let d = val(100, 3);
    let m = PlannerModel::new(ModelConfig::default(), 1).unwrap();
    let c = Condition::new("m", "none", "val", 3);
    let a = evaluate(&m, &d, &c).unwrap();
    let b = evaluate(&m, &d, &c).unwrap();
    assert_eq!(a, b);
    assert!((a.l2_avg - (a.l2_1s + a.l2_2s + a.l2_3s) / 3.0).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&a.collision_rate));
    // Averages are recomputable from the per-scene records.
    let again = summarize(a.model_hash.clone(), &c, a.records.clone());
    assert_eq!(again, a);
    let empty = Dataset {
        scenes: Vec::new(),
        ..d.clone()
    };
    assert!(matches!(evaluate(&m, &empty, &c), Err(Error::Contract(_))));
}

#[test]
fn l2_upto_hand_values() {
    let truth = [[3.0, 4.0], [0.0, 0.0], [1.0, 1.0]];
    let pred = [[0.0, 0.0], [0.0, 2.0], [1.0, 1.0]];
    assert_eq!(l2_upto(&pred, &truth, 1), 5.0);
    assert_eq!(l2_upto(&pred, &truth, 2), 3.5);
    assert!((l2_upto(&pred, &truth, 3) - 7.0 / 3.0).abs() < 1e-15);
}

fn pair(d: &Dataset) -> (PlannerModel, PlannerModel, PrototypeDictionary) {
    let base = PlannerModel::new(ModelConfig::default(), 4).unwrap();
    let dict = build_dictionary(&base.collect_embeddings(&d.scenes).unwrap(), DictSizes::default(), ClusterAlgo::KmeansPp, 1)
        .unwrap();
    let mut causal = base.clone();
    causal.dict = Some(dict.clone());
    stagewise_wire(&mut causal, &dict, ScisFlags::FULL).unwrap();
    // Make the causal model differ from the baseline.
    let mut r = crate::seeding::rng(5);
    for (k, t) in causal.params.iter_mut() {
        if k.ends_with("w_o") || k.ends_with("lambda") {
            for v in t.data_mut() {
                *v = r.gen_range(-0.3..0.3);
            }
        }
    }
    (base, causal, dict)
}

#[test]
fn ego_noise_sweep_grid_and_ratios() {
    let d = val(60, 6);
    let (b, c, _) = pair(&d);
    let cands = [Candidate { name: "base", model: &b }, Candidate { name: "causal", model: &c }];
    let r = run_ego_noise_sweep(&cands, &d, &EGO_NOISE_GRID, 0).unwrap();
    assert_eq!(r.rows.len(), 10);
    let conds: Vec<&str> = r.rows[..5].iter().map(|x| x.report.condition.as_str()).collect();
    assert_eq!(conds, ["none", "x0.0", "x0.5", "x1.5", "100 m/s"]);
    for (name, m) in [("base", &b), ("causal", &c)] {
        let clean = r.find(name, "none").unwrap();
        let plain = evaluate(m, &d, &Condition::new(name, "none", "val", 0)).unwrap();
        assert_eq!(clean.report, plain);
        assert_eq!(clean.derived, Some(1.0));
        let z = r.find(name, "x0.0").unwrap();
        assert!((z.derived.unwrap() - z.report.l2_avg / plain.l2_avg).abs() < 1e-15);
    }
    assert!(matches!(run_ego_noise_sweep(&cands[..1], &d, &EGO_NOISE_GRID, 0), Err(Error::Misuse(_))));
    assert_eq!(check_ego_noise(&r).unwrap().len(), 2);
}

#[test]
fn context_noise_sweep_zero_magnitude_is_clean() {
    let d = val(40, 7);
    let (b, c, _) = pair(&d);
    let cands = [Candidate { name: "base", model: &b }, Candidate { name: "causal", model: &c }];
    let r = run_context_noise_sweep(&cands, &d, &[0.0, 0.5, 0.7, 0.9], 3).unwrap();
    assert_eq!(r.rows.len(), 2 * (1 + 2 * 4));
    for name in ["base", "causal"] {
        let clean = &r.find(name, "none").unwrap().report;
        for block in ["agent", "map"] {
            let zero = &r.find(name, &format!("{block}:0")).unwrap().report;
            assert_eq!(zero.l2_avg, clean.l2_avg);
            assert_eq!(zero.records, clean.records);
        }
    }
    let again = run_context_noise_sweep(&cands, &d, &[0.0, 0.5, 0.7, 0.9], 3).unwrap();
    assert_eq!(to_json(&r).unwrap(), to_json(&again).unwrap());
    assert_eq!(check_context_noise(&r).unwrap().len(), 2);
    assert!(run_context_noise_sweep(&cands, &d, &[], 3).is_err());
}

#[test]
fn scenario_split_reports_gap() {
    let d = val(80, 8);
    let (b, c, _) = pair(&d);
    let cands = [Candidate { name: "base", model: &b }, Candidate { name: "causal", model: &c }];
    let r = run_scenario_split(&cands, &d, 0).unwrap();
    assert_eq!(r.rows.len(), 4);
    let st = r.find("base", "ST").unwrap();
    let lr = r.find("base", "LR").unwrap();
    assert_eq!(st.report.scenes + lr.report.scenes, 80);
    assert_eq!(lr.derived, Some(lr.report.l2_avg - st.report.l2_avg));
    assert!(check_split(&r).is_ok());
}

#[test]
fn sweeps_do_not_depend_on_thread_count() {
    let d = val(40, 9);
    let (b, c, _) = pair(&d);
    let cands = [Candidate { name: "base", model: &b }, Candidate { name: "causal", model: &c }];
    let run = || to_csv(&run_context_noise_sweep(&cands, &d, &CONTEXT_NOISE_GRID, 1).unwrap()).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
    assert_eq!(one, four);
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn training_sweeps_have_their_grids() {
    let cfg = ScenarioConfig { seed: 10, ..Default::default() };
    let train = generate_dataset(&cfg, 40).unwrap();
    let eval = generate_split(&cfg, 20, Split::Val).unwrap();
    let base = crate::planner::pretrain_baseline(&train, &tiny_cfg()).unwrap();
    let dict = build_dictionary(&base.collect_embeddings(&train.scenes).unwrap(), DictSizes::default(), ClusterAlgo::KmeansPp, 0)
        .unwrap();

    let (r, models) = run_ablation(&train, &eval, &dict, &tiny_cfg(), &ABLATION_GRID).unwrap();
    let ids: Vec<&str> = r.rows.iter().map(|x| x.report.model.as_str()).collect();
    assert_eq!(ids, ["ID-1", "ID-2", "ID-3", "ID-4"]);
    assert_eq!(models.iter().map(|m| m.sites.len()).collect::<Vec<_>>(), [0, 2, 4, 6]);
    assert_eq!(models[0].identity_hash(), base.identity_hash());
    assert_eq!(r.rows[0].derived, Some(1.0));
    assert!(check_ablation(&r).is_ok());

    let r = run_dict_sweep(&train, &eval, &base, &tiny_cfg(), ClusterAlgo::KmeansPp, &DICT_SWEEP_GRID).unwrap();
    let conds: Vec<&str> = r.rows.iter().map(|x| x.report.condition.as_str()).collect();
    assert_eq!(conds, ["none", "k=5,2,3", "k=10,3,6", "k=20,5,10"]);

    let r = run_cluster_compare(&train, &eval, &base, &tiny_cfg(), DictSizes::default(), &CLUSTER_GRID).unwrap();
    let conds: Vec<&str> = r.rows.iter().map(|x| x.report.condition.as_str()).collect();
    assert_eq!(conds, ["none", "kmeans", "kmedoids", "kmeans_pp"]);
    assert_eq!(r.notes.len(), 1);
    assert!(matches!(
        run_dict_sweep(&train, &eval, &models[3], &tiny_cfg(), ClusterAlgo::KmeansPp, &DICT_SWEEP_GRID),
        Err(Error::Misuse(_))
    ));
}

#[test]
fn csv_header_is_fixed() {
    let d = val(10, 11);
    let m = PlannerModel::new(ModelConfig::default(), 0).unwrap();
    let r = single(&m, "m", &d, 0).unwrap();
    let csv = to_csv(&r).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,model,causal,condition,split,seed,scenes,l2_1s,l2_2s,l2_3s,l2_avg,collision_rate,derived_name,derived,model_hash"
    );
    assert_eq!(lines.count(), 1);
    let scenes = scenes_to_csv(&r).unwrap();
    let mut lines = scenes.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,row,model,condition,index,context,l2_1s,l2_2s,l2_3s,collision"
    );
    assert_eq!(lines.count(), 10);
}

#[test]
fn csv_quotes_conditions_with_commas() {
    let d = val(5, 12);
    let m = PlannerModel::new(ModelConfig::default(), 0).unwrap();
    let mut r = single(&m, "m", &d, 0).unwrap();
    r.rows[0].report.condition = "k=5,2,3".into();
    let csv = to_csv(&r).unwrap();
    let mut rd = csv::Reader::from_reader(csv.as_bytes());
    let rec = rd.records().next().unwrap().unwrap();
    assert_eq!(&rec[3], "k=5,2,3");
    assert_eq!(rec[10].parse::<f64>().unwrap(), r.rows[0].report.l2_avg);
}

#[test]
fn json_round_trip() {
    let d = val(30, 13);
    let (b, c, _) = pair(&d);
    let cands = [Candidate { name: "base", model: &b }, Candidate { name: "causal", model: &c }];
    let r = run_ego_noise_sweep(&cands, &d, &EGO_NOISE_GRID, 4).unwrap();
    assert_eq!(from_json(&to_json(&r).unwrap()).unwrap(), r);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ego.csv");
    let written = emit(&r, Format::Csv, &path).unwrap();
    assert_eq!(written, [path.clone(), dir.path().join("ego.scenes.csv")]);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), to_csv(&r).unwrap());
}

fn synthetic(experiment: Experiment, cells: &[(&str, bool, &str, f64, Option<f64>)]) -> SweepReport {
    let rows = cells
        .iter()
        .map(|&(model, causal, condition, avg, derived)| SweepRow {
            causal,
            derived,
            report: summarize(
                model.into(),
                &Condition::new(model, condition, "val", 0),
                vec![SceneRecord {
                    index: 0,
                    context: "straight".into(),
                    l2: [avg; 3],
                    collision: false,
                }],
            ),
        })
        .collect();
    SweepReport {
        experiment,
        seed: 0,
        derived_name: String::new(),
        rows,
        notes: Vec::new(),
    }
}

#[test]
fn ablation_check_band() {
    let mk = |v: [f64; 4]| {
        synthetic(
            Experiment::Ablation,
            &[
                ("ID-1", false, "", v[0], None),
                ("ID-2", true, "", v[1], None),
                ("ID-3", true, "", v[2], None),
                ("ID-4", true, "", v[3], None),
            ],
        )
    };
    assert!(check_ablation(&mk([0.74, 0.63, 0.57, 0.54])).unwrap().passed);
    // Within 5% at every step.
    assert!(check_ablation(&mk([1.0, 1.04, 1.0, 1.04])).unwrap().passed);
    assert!(!check_ablation(&mk([1.0, 1.06, 1.0, 1.0])).unwrap().passed);
    assert!(!check_ablation(&mk([1.0, 0.9, 0.9, 0.95])).unwrap().passed);
    assert!(check_ablation(&synthetic(Experiment::Ablation, &[("ID-1", false, "", 1.0, None)])).is_err());
}

#[test]
fn ego_and_context_checks() {
    let ego = |causal_zero: f64, causal_abs: f64| {
        synthetic(
            Experiment::EgoNoise,
            &[
                ("b", false, "x0.0", 1.0, Some(10.0)),
                ("b", false, "100 m/s", 1.0, Some(100.0)),
                ("c", true, "x0.0", 1.0, Some(causal_zero)),
                ("c", true, "100 m/s", 1.0, Some(causal_abs)),
            ],
        )
    };
    let ok = check_ego_noise(&ego(8.0, 70.0)).unwrap();
    assert!(ok.iter().all(|c| c.passed));
    let bad = check_ego_noise(&ego(8.1, 70.1)).unwrap();
    assert!(bad.iter().all(|c| !c.passed));

    let ctx = synthetic(
        Experiment::ContextNoise,
        &[
            ("b", false, "agent:0.9", 1.0, Some(1.5)),
            ("b", false, "map:0.9", 1.0, Some(1.2)),
            ("c", true, "agent:0.9", 1.0, Some(1.4)),
            ("c", true, "map:0.9", 1.0, Some(1.2)),
        ],
    );
    let checks = check_context_noise(&ctx).unwrap();
    assert_eq!(checks.iter().map(|c| c.passed).collect::<Vec<_>>(), [true, false]);
    assert!(matches!(check_split(&ctx), Err(Error::Misuse(_))));
}

#[test]
fn pca_of_rank_one_cloud() {
    let mut r = crate::seeding::rng(14);
    let dir: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
    let offset: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            let t: f64 = r.gen_range(-3.0..3.0);
            dir.iter().zip(&offset).map(|(d, o)| o + t * d).collect()
        })
        .collect();
    let p = pca_project(&Tensor::from_rows(&rows).unwrap(), 2).unwrap();
    assert_eq!(p.coords.shape(), &[50, 2]);
    assert!(p.variance[1] < 1e-9 * p.variance[0]);
    for i in 0..50 {
        assert!(p.coords.at(i, 1).abs() < 1e-6);
    }
}

#[test]
fn pca_recovers_axis_aligned_variance() {
    // Points on the four ends of a 2 x 1 cross.
    let rows = vec![vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    let p = pca_project(&Tensor::from_rows(&rows).unwrap(), 2).unwrap();
    assert!((p.variance[0] - 8.0 / 3.0).abs() < 1e-12);
    assert!((p.variance[1] - 2.0 / 3.0).abs() < 1e-12);
    assert!((p.coords.at(0, 0).abs() - 2.0).abs() < 1e-12);
    assert!(pca_project(&Tensor::from_rows(&rows).unwrap(), 3).is_err());
    assert!(pca_project(&Tensor::from_rows(&rows[..1]).unwrap(), 1).is_err());
}

#[test]
fn experiment_spec_validation() {
    for e in [
        Experiment::EgoNoise,
        Experiment::ContextNoise,
        Experiment::ScenarioSplit,
        Experiment::Ablation,
        Experiment::DictSweep,
        Experiment::ClusterCompare,
    ] {
        assert!(!ExperimentSpec::default_grid(e).is_empty());
    }
    assert_eq!(
        ExperimentSpec::default_grid(Experiment::EgoNoise),
        ["none", "x0.0", "x0.5", "x1.5", "100 m/s"]
    );
    assert_eq!(ExperimentSpec::default_grid(Experiment::DictSweep), ["5,2,3", "10,3,6", "20,5,10"]);

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    val(5, 15).save(&data).unwrap();
    let model = dir.path().join("m.json");
    PlannerModel::new(ModelConfig::default(), 0).unwrap().save(&model).unwrap();
    let spec = ExperimentSpec {
        experiment: Experiment::Eval,
        grid: ExperimentSpec::default_grid(Experiment::Eval),
        data: data.clone(),
        train_data: None,
        models: vec![ModelRef {
            name: "m".into(),
            path: model.clone(),
        }],
        dict: None,
        out: dir.path().join("out.json"),
        format: Format::Json,
        seed: 0,
        train: TrainConfig::default(),
        sizes: DictSizes::default(),
        algo: ClusterAlgo::KmeansPp,
    };
    assert!(spec.validate().is_ok());
    assert_eq!(spec.run().unwrap().rows.len(), 1);

    let empty = ExperimentSpec {
        grid: Vec::new(),
        ..spec.clone()
    };
    assert!(matches!(empty.validate(), Err(Error::Config(_))));
    let missing = ExperimentSpec {
        data: dir.path().join("nope.jsonl"),
        ..spec.clone()
    };
    assert!(matches!(missing.validate(), Err(Error::Config(_))));
    let bad_grid = ExperimentSpec {
        experiment: Experiment::EgoNoise,
        grid: vec!["sideways".into()],
        ..spec.clone()
    };
    assert!(bad_grid.validate().is_err());
    let no_dict = ExperimentSpec {
        experiment: Experiment::Ablation,
        grid: ExperimentSpec::default_grid(Experiment::Ablation),
        train_data: Some(data),
        ..spec
    };
    assert!(matches!(no_dict.validate(), Err(Error::Config(m)) if m.contains("dictionary")));
}
