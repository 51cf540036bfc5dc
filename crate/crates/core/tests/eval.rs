//! Evaluation harness behavior on real encoded tables: embedding extraction,
//! linear probes, perturbation robustness, and the export format.

use std::sync::OnceLock;

use tabtrans::data::{encode, fit_schema, split_indices, Dataset, SchemaOptions, Split};
use tabtrans::eval::{
    auc, export_embeddings, extract_embeddings, linear_probe, perturb_eval, probe_width,
    Imputation, PerturbKind, PerturbSpec, Pooling, ProbeSpec,
};
use tabtrans::model::{init_params, predict_scores, ColEmbed, ModelConfig, TableMeta};
use tabtrans::synth;
use tabtrans::train::{train_supervised, TrainConfig, TrainedModel};

fn dataset(table: &tabtrans::data::RawTable) -> Dataset {
    let all: Vec<usize> = (0..table.n_rows()).collect();
    let schema = fit_schema(table, "y", &all, &SchemaOptions::default()).unwrap();
    encode(table, &schema).unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        dim: 8,
        n_layers: 1,
        n_heads: 2,
        col_embed: ColEmbed::Concat { denom: 4 },
        head_hidden: vec![16, 8],
        dropout: 0.1,
        head_layer_norm: false,
        ln_eps: 1e-5,
    }
}

struct Fixture {
    mcfg: ModelConfig,
    ds: Dataset,
    split: Split,
    model: TrainedModel<f32>,
}

// One trained model shared by the probe/perturbation tests below.
fn trained() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let ds = dataset(&synth::latent_table(600, 4, 0.1, 0.05, 21));
        let split = split_indices(ds.n, 2, 0.15, 0.2).unwrap();
        let mcfg = small_model();
        let tcfg = TrainConfig {
            lr: 3e-3,
            batch_size: 64,
            max_epochs: 40,
            patience: 10,
            seed: 31,
            ..Default::default()
        };
        let model = train_supervised::<f32>(&mcfg, &tcfg, &ds, &split.train, &split.val).unwrap();
        assert!(model.best_val_auc > 0.9, "fixture failed to train: {}", model.best_val_auc);
        Fixture { mcfg, ds, split, model }
    })
}

fn test_auc(f: &Fixture) -> f64 {
    let meta = TableMeta::of(&f.ds);
    let scores =
        predict_scores(&f.mcfg, &meta, &f.model.params, &f.ds, &f.split.test, 128, false).unwrap();
    let labels: Vec<u8> = f.split.test.iter().map(|&r| f.ds.labels[r]).collect();
    auc(&scores, &labels).unwrap()
}

#[test]
fn layer_zero_embeddings_depend_only_on_their_own_column() {
    let ds = dataset(&synth::latent_table(60, 3, 0.3, 0.1, 40));
    let mcfg = small_model();
    let meta = TableMeta::of(&ds);
    let params = init_params::<f32>(&mcfg, &meta, 1).unwrap();
    let rows: Vec<usize> = (0..ds.n).collect();
    let raw = extract_embeddings(&mcfg, &meta, &params, &ds, &rows, 0, 32, false).unwrap();
    let ctx = extract_embeddings(&mcfg, &meta, &params, &ds, &rows, 1, 32, false).unwrap();
    assert_eq!(raw.shape(), &[ds.n, 3, 8]);

    // Two rows that agree in column 0 but not elsewhere.
    let (a, b) = {
        let mut found = None;
        'outer: for a in 0..ds.n {
            for b in a + 1..ds.n {
                if ds.cat_row(a)[0] == ds.cat_row(b)[0] && ds.cat_row(a) != ds.cat_row(b) {
                    found = Some((a, b));
                    break 'outer;
                }
            }
        }
        found.expect("no row pair sharing column 0")
    };
    for x in 0..8 {
        assert_eq!(raw.at(&[a, 0, x]).to_bits(), raw.at(&[b, 0, x]).to_bits());
    }
    // After attention the same column sees the rest of the row.
    let diff: f32 =
        (0..8).map(|x| (ctx.at(&[a, 0, x]) - ctx.at(&[b, 0, x])).abs()).fold(0.0, f32::max);
    assert!(diff > 1e-6, "contextual embeddings identical across different rows");

    assert!(extract_embeddings(&mcfg, &meta, &params, &ds, &rows, 2, 32, false).is_err());
}

// A linear readout of the raw column embeddings scores each row as
// f(x1) + g(x2), and any such additive scorer orders at most half of the
// positive/negative pairs of an XOR label correctly (its four combo scores
// satisfy s11 + s22 = s12 + s21). One attention layer makes the interaction
// linearly decodable — even at initialization, since the four contextual
// points are no longer affinely dependent.
#[test]
fn attention_makes_the_xor_interaction_linearly_decodable() {
    let ds = dataset(&synth::xor_table(800, 0, 50));
    let mcfg = ModelConfig {
        dim: 16,
        n_layers: 1,
        n_heads: 2,
        col_embed: ColEmbed::Concat { denom: 4 },
        head_hidden: vec![16],
        dropout: 0.0,
        head_layer_norm: false,
        ln_eps: 1e-5,
    };
    let meta = TableMeta::of(&ds);
    let params = init_params::<f32>(&mcfg, &meta, 7).unwrap();
    let rows: Vec<usize> = (0..ds.n).collect();
    let (fit_rows, eval_rows) = rows.split_at(400);
    let probe = |layer: usize| {
        let spec = ProbeSpec { layer, pooling: Pooling::Concat, include_continuous: false };
        linear_probe(&mcfg, &meta, &params, &ds, fit_rows, eval_rows, &spec, 1.0, 128, false)
            .unwrap()
    };
    let raw = probe(0);
    let ctx = probe(1);
    // The exact raw-probe value depends on which half of the pairs the fit
    // happens to order and on the eval combo counts; it cannot be good.
    assert!(raw.auc < 0.65, "additive readout got {}", raw.auc);
    assert!(ctx.auc > 0.95, "contextual readout got {}", ctx.auc);
    assert!(ctx.auc - raw.auc > 0.3);
}

#[test]
fn probe_width_follows_pooling_choice() {
    let cfg = ModelConfig::default();
    let meta = TableMeta { cards: vec![3; 5], n_cont: 3 };
    let concat = ProbeSpec { layer: 0, pooling: Pooling::Concat, include_continuous: true };
    assert_eq!(probe_width(&cfg, &meta, &concat), cfg.head_input_width(5, 3));
    assert_eq!(probe_width(&cfg, &meta, &concat), 163);
    let avg = ProbeSpec { pooling: Pooling::Average, ..concat };
    assert_eq!(probe_width(&cfg, &meta, &avg), 35);
    let max = ProbeSpec { pooling: Pooling::Max, include_continuous: false, ..concat };
    assert_eq!(probe_width(&cfg, &meta, &max), 32);
}

#[test]
fn probe_tracks_the_trained_model() {
    let f = trained();
    let meta = TableMeta::of(&f.ds);
    let reference = test_auc(f);
    assert!(reference > 0.85, "reference AUC {reference}");
    let spec =
        ProbeSpec { layer: f.mcfg.n_layers, pooling: Pooling::Concat, include_continuous: false };
    let probe = linear_probe(
        &f.mcfg,
        &meta,
        &f.model.params,
        &f.ds,
        &f.split.train,
        &f.split.test,
        &spec,
        reference,
        128,
        false,
    )
    .unwrap();
    // Near-separable features keep the loss drifting past the tolerance, so
    // the fit may stop on the iteration cap; ranking quality is the measure.
    assert!(probe.fit.iterations > 100);
    assert!(
        probe.normalized > 0.9,
        "probe {} vs model {reference}",
        probe.auc
    );
}

#[test]
fn probe_on_coin_flip_labels_sits_at_chance() {
    // label_noise 0.5 makes the target an independent coin.
    let ds = dataset(&synth::latent_table(600, 3, 0.2, 0.5, 60));
    let mcfg = small_model();
    let meta = TableMeta::of(&ds);
    let params = init_params::<f32>(&mcfg, &meta, 3).unwrap();
    let rows: Vec<usize> = (0..ds.n).collect();
    let (fit_rows, eval_rows) = rows.split_at(300);
    let spec = ProbeSpec { layer: 1, pooling: Pooling::Concat, include_continuous: false };
    let probe =
        linear_probe(&mcfg, &meta, &params, &ds, fit_rows, eval_rows, &spec, 1.0, 128, false)
            .unwrap();
    assert!((probe.auc - 0.5).abs() < 0.1, "chance probe got {}", probe.auc);
}

#[test]
fn zero_rate_perturbation_is_the_clean_model_bitwise() {
    let f = trained();
    let meta = TableMeta::of(&f.ds);
    for imputation in [Imputation::MissingClass, Imputation::AverageEmbedding] {
        for kind in [PerturbKind::Noise, PerturbKind::Missing] {
            let spec = PerturbSpec { kind, rate: 0.0, imputation, seeds: vec![1, 2, 3] };
            let out =
                perturb_eval(&f.mcfg, &meta, &f.model.params, &f.ds, &f.split.test, &spec, 128)
                    .unwrap();
            assert_eq!(out.cells_perturbed, 0);
            assert!(out.per_seed.iter().all(|a| a.to_bits() == out.clean_auc.to_bits()));
            assert_eq!(out.normalized, 1.0);
        }
    }
}

// Marking every cell missing collapses all rows to the same input, so every
// score ties and the tie-averaged AUC is exactly one half.
#[test]
fn all_missing_rows_tie_at_exactly_half() {
    let f = trained();
    let meta = TableMeta::of(&f.ds);
    for imputation in [Imputation::MissingClass, Imputation::AverageEmbedding] {
        let spec =
            PerturbSpec { kind: PerturbKind::Missing, rate: 1.0, imputation, seeds: vec![5] };
        let out = perturb_eval(&f.mcfg, &meta, &f.model.params, &f.ds, &f.split.test, &spec, 128)
            .unwrap();
        assert_eq!(out.cells_perturbed, out.cells_total);
        assert_eq!(out.mean_auc, 0.5);
    }
}

#[test]
fn full_noise_destroys_the_categorical_signal() {
    let f = trained();
    let meta = TableMeta::of(&f.ds);
    let spec = PerturbSpec {
        kind: PerturbKind::Noise,
        rate: 1.0,
        imputation: Imputation::MissingClass,
        seeds: vec![1, 2, 3, 4, 5],
    };
    let out =
        perturb_eval(&f.mcfg, &meta, &f.model.params, &f.ds, &f.split.test, &spec, 128).unwrap();
    assert!(out.clean_auc > 0.85);
    assert_eq!(out.cells_perturbed, out.cells_total);
    for &a in &out.per_seed {
        assert!((0.3..0.7).contains(&a), "noise-only AUC {a}");
    }
    assert!(out.normalized < 0.8);
    assert!(out.min_auc <= out.mean_auc && out.mean_auc <= out.max_auc);
}

#[test]
fn export_writes_row_lines_then_exact_class_means() {
    let mut ds = dataset(&synth::latent_table(40, 3, 0.2, 0.1, 33));
    let m = ds.m();
    ds.cat[5 * m + 1] = 0; // one genuinely missing cell
    let mcfg = small_model();
    let meta = TableMeta::of(&ds);
    let params = init_params::<f32>(&mcfg, &meta, 9).unwrap();

    // Skip every row showing column 0's last class so its mean line must
    // come out as a zero vector with count 0.
    let last = meta.cards[0] as u32;
    let rows: Vec<usize> = (0..ds.n).filter(|&r| ds.cat_row(r)[0] != last).collect();
    assert!(rows.len() < ds.n, "fixture never drew the excluded class");

    let mut buf = Vec::new();
    export_embeddings(&mcfg, &meta, &params, &ds, &rows, 1, 16, false, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    let d = mcfg.dim;
    assert_eq!(
        lines[0],
        format!(
            "kind,row_id,column,class_label,count,{}",
            (0..d).map(|x| format!("e{x}")).collect::<Vec<_>>().join(",")
        )
    );
    let n_class_lines: usize = meta.cards.iter().sum();
    assert_eq!(lines.len(), 1 + rows.len() * m + n_class_lines);

    let cols: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split(',').collect()).collect();
    let (row_lines, class_lines) = cols.split_at(rows.len() * m);
    assert!(row_lines.iter().all(|f| f[0] == "row" && f[4] == "1"));
    assert!(class_lines.iter().all(|f| f[0] == "class" && f[1].is_empty()));

    // The injected missing cell exports with an empty class label.
    let missing: Vec<_> = row_lines.iter().filter(|f| f[3].is_empty()).collect();
    assert_eq!(missing.len(), 1);
    assert_eq!(missing[0][1], "5");
    assert_eq!(missing[0][2], "view1");

    // Recompute one observed mean and check the absent class is zeroed.
    let col0 = ds.schema.cat_columns().next().unwrap();
    let target_label = col0.classes[0].as_str();
    let members: Vec<_> = row_lines
        .iter()
        .filter(|f| f[2] == col0.name && f[3] == target_label)
        .collect();
    assert!(!members.is_empty());
    let mean_e0: f64 =
        members.iter().map(|f| f[5].parse::<f64>().unwrap()).sum::<f64>() / members.len() as f64;
    let line = class_lines
        .iter()
        .find(|f| f[2] == col0.name && f[3] == target_label)
        .unwrap();
    assert_eq!(line[4].parse::<usize>().unwrap(), members.len());
    assert_eq!(line[5].parse::<f64>().unwrap(), mean_e0);

    let absent = class_lines
        .iter()
        .find(|f| f[2] == col0.name && f[3] == col0.classes[last as usize - 1])
        .unwrap();
    assert_eq!(absent[4], "0");
    assert!(absent[5..].iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
}
