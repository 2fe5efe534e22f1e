use dropprof::mc_eval::RunSummary;
use dropprof::model::DropoutConfig;
use dropprof::report::{audit, parse_bars, ReportBundle, DEFAULT_TOP_K};
use dropprof::stats::{compare, SummaryRecord};

fn record(
    model: &str,
    config: DropoutConfig,
    overall: (f64, f64),
    memory: (f64, f64),
    reasoning: (f64, f64),
) -> SummaryRecord {
    SummaryRecord {
        model_id: model.into(),
        family: None,
        config,
        summary: RunSummary::from_moments(overall, Some(memory), Some(reasoning)),
    }
}

/// Eight models under all five presets with varied numbers.
fn grid() -> Vec<SummaryRecord> {
    let mut out = Vec::new();
    for m in 0..8 {
        for (c, config) in DropoutConfig::presets().into_iter().enumerate() {
            let k = (m * 7 + c * 3) as f64;
            let std = if c == 0 {
                0.0
            } else {
                0.005 + 0.002 * ((m + c) % 5) as f64
            };
            out.push(record(
                &format!("model-{m}"),
                config,
                (0.55 + 0.01 * (k % 19.0), std),
                (0.6 + 0.013 * (k % 23.0), std * 0.8),
                (0.45 + 0.011 * (k % 17.0), std * 1.3),
            ));
        }
    }
    out
}

fn bundle(records: Vec<SummaryRecord>) -> ReportBundle {
    let det: Vec<f64> = vec![0.7; 10];
    let mc: Vec<f64> = (0..10).map(|i| 0.6 + 0.01 * i as f64).collect();
    let comparisons = vec![compare(
        "model-0/deterministic",
        &det,
        "model-0/baseline",
        &mc,
        15,
        0.05,
    )
    .unwrap()];
    ReportBundle::build(
        "sweep-x",
        "2024-01-01T00:00:00Z",
        records,
        comparisons,
        DEFAULT_TOP_K,
        0.05,
    )
    .unwrap()
}

#[test]
fn full_report_is_traceable_and_idempotent() {
    let b = bundle(grid());
    let docs = b.render().unwrap();
    let findings = audit(&b, &docs);
    assert!(findings.is_empty(), "{findings:#?}");
    assert_eq!(docs, b.render().unwrap());
    assert_eq!(b.stability.len(), 5);
    assert_eq!(b.stability[0].quartile_size, 2);
    // 1 within-model test plus 3 quartile tests per configuration.
    let comparisons = docs
        .iter()
        .find(|d| d.path == "tables/comparisons.csv")
        .unwrap();
    assert_eq!(comparisons.contents.lines().count(), 1 + 1 + 15);
}

#[test]
fn written_report_reloads_to_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(grid());
    let paths = b.write(dir.path()).unwrap();
    let back = ReportBundle::load(dir.path()).unwrap();
    assert_eq!(back, b);
    for (p, d) in paths.iter().zip(back.render().unwrap()) {
        assert_eq!(
            std::fs::read_to_string(dir.path().join(p)).unwrap(),
            d.contents
        );
    }
}

#[test]
fn audit_catches_tampering() {
    let b = bundle(grid());
    let clean = b.render().unwrap();

    let mut docs = clean.clone();
    let csv = docs
        .iter_mut()
        .find(|d| d.path == "tables/config_effects.csv")
        .unwrap();
    let row = csv.contents.lines().nth(1).unwrap().to_owned();
    let cells: Vec<&str> = row.split(',').collect();
    let bumped = format!("{:.3}", cells[1].parse::<f64>().unwrap() + 0.001);
    csv.contents = csv
        .contents
        .replacen(&row, &row.replacen(cells[1], &bumped, 1), 1);
    let f = audit(&b, &docs);
    // The csv cell no longer re-derives and no longer matches the txt rows.
    assert_eq!(f.len(), 2, "{f:#?}");

    let mut docs = clean.clone();
    let svg = docs
        .iter_mut()
        .find(|d| d.path == "figures/memory.svg")
        .unwrap();
    let first = parse_bars(&svg.contents)[0].clone();
    svg.contents = svg.contents.replacen(
        &format!("data-mean=\"{}\"", first.2),
        "data-mean=\"0.5\"",
        1,
    );
    assert!(!audit(&b, &docs).is_empty());

    let mut docs = clean;
    let txt = docs
        .iter_mut()
        .find(|d| d.path == "tables/degradation.txt")
        .unwrap();
    txt.contents = txt
        .contents
        .replace("Deterministic better in", "Deterministic better  in");
    assert!(!audit(&b, &docs).is_empty());
}

#[test]
fn single_model_gives_top_one_table() {
    let records = vec![
        record(
            "only",
            DropoutConfig::deterministic(),
            (0.8, 0.0),
            (0.9, 0.0),
            (0.7, 0.0),
        ),
        record(
            "only",
            DropoutConfig::baseline(),
            (0.75, 0.0139),
            (0.85, 0.0139),
            (0.65, 0.0527),
        ),
    ];
    let b = ReportBundle::build("s", "t", records, vec![], 5, 0.05).unwrap();
    let docs = b.render().unwrap();
    let top = docs
        .iter()
        .find(|d| d.path == "tables/top_models.csv")
        .unwrap();
    assert_eq!(
        top.contents,
        "Model,Overall Acc,Memory Acc,Reasoning Acc,Overall Std,Memory Std,Reasoning Std,Delta\n\
         only,0.750,0.850,0.650,0.0139,0.0139,0.0527,+0.200\n"
    );
    assert!(audit(&b, &docs).is_empty());
}

#[test]
fn sorting_matches_hand_order() {
    // Hand sort: by overall mean descending, b (0.72) > c (0.70) > a (0.65).
    let base = DropoutConfig::baseline;
    let records = vec![
        record("a", base(), (0.65, 0.01), (0.8, 0.01), (0.5, 0.01)),
        record("b", base(), (0.72, 0.01), (0.9, 0.01), (0.54, 0.01)),
        record("c", base(), (0.70, 0.01), (0.85, 0.01), (0.55, 0.01)),
    ];
    let b = ReportBundle::build("s", "t", records, vec![], 5, 0.05).unwrap();
    let order: Vec<&str> = b.top_table.iter().map(|r| r.model_id.as_str()).collect();
    assert_eq!(order, ["b", "c", "a"]);
}

#[test]
fn degradation_figure_has_two_bars_per_model() {
    let b = bundle(grid());
    for d in b.figures() {
        let bars = parse_bars(&d.contents);
        assert_eq!(bars.len(), 10, "{}", d.path);
        let groups: Vec<&String> = bars.iter().map(|b| &b.0).collect();
        let expected: Vec<&String> = b
            .degradation
            .entries
            .iter()
            .take(5)
            .flat_map(|e| [&e.model_id, &e.model_id])
            .collect();
        assert_eq!(groups, expected);
        assert!(bars
            .iter()
            .step_by(2)
            .all(|b| b.1 == "Deterministic" && b.3 == 0.0));
    }
}
