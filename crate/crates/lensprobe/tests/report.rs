use lensprobe::report::{self, PlotSelection, RunMetadata};
use lensprobe::svg::{render_lines, render_ridgeline, Axes, LineSeries};
use lensprobe::Error;
use lensprobe_core::analysis::{EntropyAggregate, EntropyMatrix};
use lensprobe_core::{LensRecord, TokenId};

fn meta() -> RunMetadata {
    RunMetadata {
        model: "toy".into(),
        lens_mode: "final_norm".into(),
        layers: 2,
        vocab_size: 32,
        seq_len: 3,
        sentences_read: 10,
        sentences_sampled: 5,
        sequences_kept: 4,
        seed: 1,
        bins: 8,
        timestamp: "2024-01-01T00:00:00Z".into(),
    }
}

/// 2 blocks, 3 positions, 4 sequences.
fn aggregate() -> EntropyAggregate {
    let mut agg = EntropyAggregate::new(3, 3, 8, 32).unwrap();
    for s in 0..4 {
        let mut records = Vec::new();
        for j in 0..3 {
            for i in 1..=3 {
                records.push(LensRecord {
                    layer: j,
                    position: i,
                    entropy_bits: 5.0 - 0.7 * j as f64 - 0.3 * i as f64 + 0.123_456_789 * s as f64,
                    top1: TokenId(0),
                    correct: (i < 3 || s % 2 == 0).then_some((s + i + j) % 3 == 0),
                });
            }
        }
        agg.accumulate(&records).unwrap();
    }
    agg
}

#[test]
fn entropy_csv_layout() {
    let m = aggregate().finalize().unwrap();
    let csv = report::entropy_csv(&m, &meta()).unwrap();
    assert!(!csv.contains('\r'));
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("layer,position,mean_entropy_bits,stdev_bits,error_rate,count"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[0].starts_with("0,1,4.885185,"), "{}", rows[0]);
    assert!(csv.starts_with("# bins: 8\n"));
    assert!(csv.contains("# lens_mode: final_norm\n"));
    assert!(csv.contains("# timestamp: 2024-01-01T00:00:00Z\n"));
    assert_eq!(csv, report::entropy_csv(&m, &meta()).unwrap());
}

#[test]
fn csv_roundtrip_at_printed_precision() {
    let m = aggregate().finalize().unwrap();
    let rows = report::parse_entropy_csv(&report::entropy_csv(&m, &meta()).unwrap()).unwrap();
    for r in &rows {
        let c = r.layer * 3 + r.position - 1;
        assert!((r.mean - m.mean[c]).abs() <= 5e-7);
        assert!((r.stdev - m.stdev[c]).abs() <= 5e-7);
        assert_eq!(r.count, m.count[c]);
        match (r.error_rate, m.error_rate[c]) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 5e-7),
            (a, b) => assert_eq!(a.is_none(), b.is_none()),
        }
    }
}

#[test]
fn errors_csv_counts() {
    let m = aggregate().finalize().unwrap();
    let csv = report::errors_csv(&m, &meta()).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 9);
    // last position: only even sequences have a known next token
    assert!(rows[2].ends_with(",2"), "{}", rows[2]);
}

#[test]
fn empty_matrix_is_refused() {
    let m = EntropyMatrix {
        layers: 0,
        positions: 0,
        bins: 8,
        max_entropy: 5.0,
        mean: vec![],
        stdev: vec![],
        error_rate: vec![],
        count: vec![],
        errors: vec![],
        error_denominator: vec![],
        density: vec![],
    };
    assert!(matches!(report::entropy_csv(&m, &meta()), Err(Error::EmptyCorpus)));
    assert!(matches!(report::errors_csv(&m, &meta()), Err(Error::EmptyCorpus)));
}

#[test]
fn distributions_json_carries_metadata_and_quantiles() {
    let text = report::distributions_json(&aggregate(), None, &meta()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["metadata"]["model"], "toy");
    assert_eq!(v["cells"].as_array().unwrap().len(), 9);
    assert_eq!(v["cells"][0]["quantiles"].as_array().unwrap().len(), 5);
    assert!(v["cells"][0].get("exact_quantiles").is_none());
}

fn svg_root(svg: &str) -> roxmltree::Document<'_> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    doc
}

fn count(doc: &roxmltree::Document, tag: &str) -> usize {
    doc.descendants().filter(|n| n.tag_name().name() == tag).count()
}

fn axes() -> Axes {
    Axes {
        title: "t".into(),
        x_label: "x".into(),
        y_label: "y".into(),
        y_from_zero: false,
    }
}

#[test]
fn flat_series_is_horizontal() {
    let s = LineSeries {
        label: "flat".into(),
        points: vec![(1.0, 2.0), (2.0, 2.0), (3.0, 2.0)],
    };
    let svg = render_lines(&[s], &axes(), "{}").unwrap();
    let doc = svg_root(&svg);
    let line = doc.descendants().find(|n| n.has_tag_name("polyline")).unwrap();
    let ys: Vec<&str> = line
        .attribute("points")
        .unwrap()
        .split(' ')
        .map(|p| p.split(',').nth(1).unwrap())
        .collect();
    assert!(ys.iter().all(|y| *y == ys[0]));
    assert_eq!(count(&doc, "metadata"), 1);
}

#[test]
fn two_series_two_legend_entries() {
    let series: Vec<LineSeries> = ["a & b", "c"]
        .iter()
        .map(|l| LineSeries {
            label: l.to_string(),
            points: vec![(0.0, 1.0), (1.0, 0.5)],
        })
        .collect();
    let svg = render_lines(&series, &axes(), "{\"k\":\"<v>\"}").unwrap();
    let doc = svg_root(&svg);
    assert_eq!(count(&doc, "polyline"), 2);
    let legends = doc.descendants().filter(|n| n.attribute("class") == Some("legend")).count();
    assert_eq!(legends, 2);
    let meta = doc.descendants().find(|n| n.has_tag_name("metadata")).unwrap();
    assert_eq!(meta.text(), Some("{\"k\":\"<v>\"}"));
    assert_eq!(svg, render_lines(&series, &axes(), "{\"k\":\"<v>\"}").unwrap());
}

#[test]
fn line_chart_input_errors() {
    assert!(render_lines(&[], &axes(), "").is_err());
    let short = LineSeries {
        label: "s".into(),
        points: vec![(0.0, 1.0)],
    };
    assert!(render_lines(&[short], &axes(), "").is_err());
}

#[test]
fn ridgeline_shapes() {
    let agg = aggregate();
    let views: Vec<_> = (0..3).map(|j| agg.distribution_view(3, j).unwrap()).collect();
    let svg = render_ridgeline(&views, "r", "{}").unwrap();
    let doc = svg_root(&svg);
    assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("ridge")).count(), 3);
    assert!(svg.contains(">layer 0<") && svg.contains(">layer 2<"));
    assert_eq!(svg, render_ridgeline(&views, "r", "{}").unwrap());

    let one = render_ridgeline(&views[..1], "r", "{}").unwrap();
    assert_eq!(svg_root(&one).descendants().filter(|n| n.attribute("class") == Some("ridge")).count(), 1);
    assert!(render_ridgeline(&[], "r", "{}").is_err());
}

#[test]
fn single_bin_mass_is_one_spike() {
    let mut agg = EntropyAggregate::new(1, 1, 8, 32).unwrap();
    for _ in 0..5 {
        agg.accumulate(&[LensRecord {
            layer: 0,
            position: 1,
            entropy_bits: 1.0,
            top1: TokenId(0),
            correct: None,
        }])
        .unwrap();
    }
    let view = agg.distribution_view(1, 0).unwrap();
    let svg = render_ridgeline(&[view], "r", "{}").unwrap();
    let doc = svg_root(&svg);
    let d = doc
        .descendants()
        .find(|n| n.attribute("class") == Some("ridge"))
        .unwrap()
        .attribute("d")
        .unwrap();
    let base = d.split(' ').next().unwrap().split(',').nth(1).unwrap();
    let raised = d
        .split(' ')
        .filter(|p| p.starts_with('L'))
        .filter(|p| p.split(',').nth(1) != Some(base))
        .count();
    assert_eq!(raised, 1, "{d}");
}

#[test]
fn plot_selection_defaults_and_validation() {
    let s = PlotSelection::default_for(12, 40);
    assert_eq!(s.layers, [0, 3, 6, 9, 12]);
    assert_eq!(s.positions, [1, 10, 20, 30, 40]);
    assert_eq!(PlotSelection::default_for(2, 3).layers, [0, 1, 2]);
    assert!(s.validate(12, 40).is_ok());
    assert!(PlotSelection { layers: vec![13], positions: vec![1] }.validate(12, 40).is_err());
    assert!(PlotSelection { layers: vec![0], positions: vec![0] }.validate(12, 40).is_err());
}
