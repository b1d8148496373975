use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use mcb_core::corpus::{generate_corpus, load_dataset, save_dataset, Dataset, Note, Split};
use mcb_core::evalstat::{
    auc_scores, default_bin_sizes, f1_scores, load_predictions, longtail_binned_f1, paired_bootstrap, percentile,
    precision_recall_decomposition, resample, save_predictions, topk_metrics, Metric, PredictionSet,
};
use mcb_core::interpret::{
    build_topc, ccr, cim_from_norms, cim_norms, cstpr, mask_intervention, CimSurface, PairReport, PairSelection,
    TopCMap,
};
use mcb_core::model::{load_checkpoint, predict, resolve_pseudo_labels, save_checkpoint, train_model, Model};
use mcb_core::negex::{activation_counts, pseudo_label, TriggerLexicon};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{CimPairs, RunConfig};
use crate::{Cli, Command, ModelArgs};

pub(crate) fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let resolved = cfg.out.join(format!("resolved_config.{}.toml", cli.name()));
    fs::write(&resolved, cfg.to_toml()?).with_context(|| format!("writing {}", resolved.display()))?;
    let start = Instant::now();
    match &cli.command {
        Command::GenData => gen_data(&cfg)?,
        Command::PseudoLabel { corpus, lexicon } => {
            pseudo_label_cmd(&cfg, corpus.corpus.as_deref(), lexicon.as_deref())?
        }
        Command::Train { corpus, .. } => train(&cfg, corpus.corpus.as_deref())?,
        Command::Eval { args, .. } => eval(&cfg, args)?,
        Command::Interpret { args, .. } => interpret(&cfg, args)?,
        Command::Intervene { args, .. } => intervene(&cfg, args)?,
        Command::Compare { a, b, .. } => compare(&cfg, a, b)?,
        Command::Report { runs } => report(&cfg, runs)?,
    }
    info!("{} finished in {:.2?}", cli.name(), start.elapsed());
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn corpus_path(cfg: &RunConfig, given: Option<&Path>) -> PathBuf {
    given
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out.join("corpus.jsonl"))
}

fn load_corpus(cfg: &RunConfig, given: Option<&Path>) -> Result<Dataset> {
    let path = corpus_path(cfg, given);
    if !path.exists() {
        bail!("corpus file {} not found", path.display());
    }
    Ok(load_dataset(&path)?)
}

fn load_model(cfg: &RunConfig, args: &ModelArgs) -> Result<(Model, Dataset)> {
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| cfg.out.join("model.ckpt"));
    if !ckpt.exists() {
        bail!("checkpoint {} not found", ckpt.display());
    }
    let model = load_checkpoint(&ckpt)?;
    let ds = load_corpus(cfg, args.corpus.corpus.as_deref())?;
    if ds.vocabulary != model.concepts || ds.label_space != model.labels {
        bail!("corpus and checkpoint disagree on concepts or labels");
    }
    Ok((model, ds))
}

/// Notes of `split`, their pseudo-labels and the model's predictions.
fn split_predictions<'a>(cfg: &RunConfig, model: &Model, ds: &'a Dataset) -> Result<(Vec<&'a Note>, PredictionSet)> {
    let split = cfg.evaluation.split;
    let pseudo = resolve_pseudo_labels(ds);
    let idx = ds.split_indices(split);
    if idx.is_empty() {
        bail!("split {} is empty", split.as_str());
    }
    let notes: Vec<&Note> = idx.iter().map(|&i| &ds.notes[i]).collect();
    let p: Vec<Vec<u8>> = idx.iter().map(|&i| pseudo[i].clone()).collect();
    let pred = predict(model, &notes, &p, cfg.evaluation.tau)?;
    Ok((notes, pred))
}

fn topc_for(cfg: &RunConfig, ds: &Dataset) -> Result<TopCMap> {
    let pseudo = resolve_pseudo_labels(ds);
    let train = ds.split_indices(Split::Train);
    let p: Vec<Vec<u8>> = train.iter().map(|&i| pseudo[i].clone()).collect();
    let y: Vec<Vec<u8>> = train.iter().map(|&i| ds.notes[i].labels.clone()).collect();
    Ok(build_topc(&p, &y, cfg.interpret.topc_k)?)
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let ds = generate_corpus(&cfg.generator)?;
    save_dataset(&ds, cfg.out.join("corpus.jsonl"))?;
    let mut splits = BTreeMap::new();
    for s in [Split::Train, Split::Val, Split::Test] {
        splits.insert(s.as_str(), ds.split_indices(s).len());
    }
    let prevalence: Vec<usize> = (0..ds.label_space.len())
        .map(|j| ds.notes.iter().filter(|n| n.labels[j] == 1).count())
        .collect();
    write_json(
        &cfg.out.join("corpus_summary.json"),
        &json!({
            "notes": ds.notes.len(),
            "concepts": ds.vocabulary.names(),
            "labels": ds.label_space.codes(),
            "splits": splits,
            "label_positives": prevalence,
        }),
    )
}

fn pseudo_label_cmd(cfg: &RunConfig, corpus: Option<&Path>, lexicon: Option<&Path>) -> Result<()> {
    let mut ds = load_corpus(cfg, corpus)?;
    let lex = match lexicon {
        Some(p) => TriggerLexicon::load(p)?,
        None => TriggerLexicon::default(),
    };
    let (naive, negex) = activation_counts(ds.notes.iter(), &ds.vocabulary, &lex);
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for note in ds.notes.iter_mut() {
        let p = pseudo_label(note, &ds.vocabulary, &lex);
        for (&a, &t) in p.iter().zip(&note.true_concepts) {
            match (a, t) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
        }
        note.pseudo_labels = Some(p);
    }
    save_dataset(&ds, cfg.out.join("corpus.pseudo.jsonl"))?;
    write_text(&cfg.out.join("lexicon.txt"), &lex.to_file_string())?;
    let ratio = |a: usize, b: usize| {
        if b == 0 {
            Value::Null
        } else {
            json!(a as f64 / b as f64)
        }
    };
    write_json(
        &cfg.out.join("pseudo_label_report.json"),
        &json!({
            "notes": ds.notes.len(),
            "naive_activations": naive,
            "negex_activations": negex,
            "correction_rate": ratio(naive - negex, naive),
            "precision_vs_truth": ratio(tp, tp + fp),
            "recall_vs_truth": ratio(tp, tp + fn_),
        }),
    )
}

fn train(cfg: &RunConfig, corpus: Option<&Path>) -> Result<()> {
    let ds = match corpus {
        Some(p) => load_corpus(cfg, Some(p))?,
        None => {
            let ds = generate_corpus(&cfg.generator)?;
            save_dataset(&ds, cfg.out.join("corpus.jsonl"))?;
            ds
        }
    };
    let result = train_model(&ds, &cfg.model, &cfg.training)?;
    save_checkpoint(&result.model, cfg.out.join("model.ckpt"))?;
    let mut csv = String::from("epoch,loss,diag,align,concept,val_macro_f1,val_micro_f1\n");
    for r in &result.curves {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.loss,
            r.components.diag,
            r.components.align,
            r.components.concept,
            r.val_macro_f1,
            r.val_micro_f1
        )?;
    }
    write_text(&cfg.out.join("curves.csv"), &csv)?;
    write_json(
        &cfg.out.join("train_report.json"),
        &json!({
            "model": cfg.model.kind,
            "ablation": cfg.model.ablation,
            "best_epoch": result.best_epoch,
            "curves": result.curves,
        }),
    )
}

fn eval(cfg: &RunConfig, args: &ModelArgs) -> Result<()> {
    let (model, ds) = load_model(cfg, args)?;
    let (_, pred) = split_predictions(cfg, &model, &ds)?;
    save_predictions(&pred, cfg.out.join("predictions.jsonl"))?;
    let train = ds.split_indices(Split::Train);
    let l = ds.label_space.len();
    let counts: Vec<usize> = (0..l)
        .map(|j| train.iter().filter(|&&i| ds.notes[i].labels[j] == 1).count())
        .collect();
    let ks: Vec<usize> = cfg.evaluation.k_list.iter().copied().filter(|&k| k <= l).collect();
    let auc = match auc_scores(&pred) {
        Ok(a) => json!(a),
        Err(e) => {
            warn!("AUC unavailable: {e}");
            Value::Null
        }
    };
    let f1 = f1_scores(&pred)?;
    let mut per_label = String::from("label,f1,train_positives\n");
    for (j, code) in ds.label_space.codes().iter().enumerate() {
        writeln!(per_label, "{code},{},{}", f1.per_label[j], counts[j])?;
    }
    write_text(&cfg.out.join("per_label.csv"), &per_label)?;
    write_json(
        &cfg.out.join("metrics.json"),
        &json!({
            "split": cfg.evaluation.split,
            "notes": pred.len(),
            "tau": pred.tau,
            "f1": f1,
            "precision_recall": precision_recall_decomposition(&pred)?,
            "auc": auc,
            "top_k": topk_metrics(&pred, &ks)?,
            "longtail": longtail_binned_f1(&pred, &counts, default_bin_sizes(l))?,
        }),
    )
}

#[derive(Serialize)]
struct Interval {
    value: f64,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    replicates_used: usize,
}

fn interval(value: f64, mut reps: Vec<f64>) -> Interval {
    reps.sort_by(f64::total_cmp);
    let used = reps.len();
    Interval {
        value,
        ci_low: (used > 0).then(|| percentile(&reps, 0.025)),
        ci_high: (used > 0).then(|| percentile(&reps, 0.975)),
        replicates_used: used,
    }
}

fn pair_csv(out: &mut String, tag: &str, model: &Model, r: &PairReport) -> Result<()> {
    for p in &r.pairs {
        writeln!(
            out,
            "{tag},{},{},{},{}",
            model.concepts.names()[p.concept],
            model.labels.codes()[p.label],
            p.value,
            p.support
        )?;
    }
    Ok(())
}

fn interpret(cfg: &RunConfig, args: &ModelArgs) -> Result<()> {
    let (model, ds) = load_model(cfg, args)?;
    let (notes, pred) = split_predictions(cfg, &model, &ds)?;
    let topc = topc_for(cfg, &ds)?;
    let selection = match cfg.interpret.cim_pairs {
        CimPairs::Topc => PairSelection::TopC(&topc),
        CimPairs::All => PairSelection::All,
    };
    let head_norms = cim_norms(&model, &notes, &pred, CimSurface::Head)?;
    let common_norms = cim_norms(&model, &notes, &pred, CimSurface::Common)?;
    let cs = cstpr(&pred, &topc)?;
    let cc = ccr(&pred, &topc)?;
    let ch = cim_from_norms(&pred, &head_norms, selection)?;
    let cp = cim_from_norms(&pred, &common_norms, selection)?;

    let seed = cfg.stat_seed();
    let mut reps: [Vec<f64>; 4] = Default::default();
    for b in 0..cfg.interpret.bootstrap_b {
        let idx = resample(pred.len(), seed, b);
        let p = pred.select(&idx);
        let hn: Vec<Vec<f64>> = idx.iter().map(|&i| head_norms[i].clone()).collect();
        let pn: Vec<Vec<f64>> = idx.iter().map(|&i| common_norms[i].clone()).collect();
        let vals = [
            cstpr(&p, &topc).map(|r| r.macro_value),
            ccr(&p, &topc).map(|r| r.aggregate),
            cim_from_norms(&p, &hn, selection).map(|r| r.aggregate),
            cim_from_norms(&p, &pn, selection).map(|r| r.aggregate),
        ];
        for (slot, v) in reps.iter_mut().zip(vals) {
            if let Ok(v) = v {
                slot.push(v);
            }
        }
    }
    let [r_cs, r_cc, r_ch, r_cp] = reps;

    let names = model.concepts.names();
    let topc_named: Vec<Value> = topc
        .entries
        .iter()
        .enumerate()
        .map(|(j, e)| {
            json!({
                "label": model.labels.codes()[j],
                "concepts": e.iter().map(|&(c, r)| json!({"concept": names[c], "r": r})).collect::<Vec<_>>(),
            })
        })
        .collect();
    write_json(
        &cfg.out.join("interpret.json"),
        &json!({
            "model": model.kind(),
            "split": cfg.evaluation.split,
            "notes": pred.len(),
            "bootstrap_b": cfg.interpret.bootstrap_b,
            "seed": seed,
            "cim_pairs": cfg.interpret.cim_pairs,
            "cstpr": interval(cs.macro_value, r_cs),
            "ccr": interval(cc.aggregate, r_cc),
            "cim_head": interval(ch.aggregate, r_ch),
            "cim_common_surface": interval(cp.aggregate, r_cp),
            "cstpr_per_label": cs.per_label,
            "topc": topc_named,
            "zero_variance_concepts": topc.zero_variance.iter().map(|&c| &names[c]).collect::<Vec<_>>(),
        }),
    )?;
    let mut pairs = String::from("metric,concept,label,value,support\n");
    pair_csv(&mut pairs, "ccr", &model, &cc)?;
    pair_csv(&mut pairs, "cim_head", &model, &ch)?;
    pair_csv(&mut pairs, "cim_common_surface", &model, &cp)?;
    write_text(&cfg.out.join("interpret_pairs.csv"), &pairs)
}

fn intervene(cfg: &RunConfig, args: &ModelArgs) -> Result<()> {
    let (model, ds) = load_model(cfg, args)?;
    let (notes, pred) = split_predictions(cfg, &model, &ds)?;
    let topc = topc_for(cfg, &ds)?;
    let rep = mask_intervention(
        &model,
        &notes,
        &pred,
        &topc,
        cfg.interpret.pairs,
        cfg.interpret.bootstrap_b,
        cfg.stat_seed(),
    )?;
    let mut csv = String::from("note_id,label,valid,masked_tokens,p_before,p_after,target_drop,control_drop\n");
    for r in &rep.records {
        let masked: usize = r.masked_spans.iter().map(|s| s.1 - s.0).sum();
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.note_id,
            model.labels.codes()[r.label],
            r.valid,
            masked,
            r.p_before,
            r.p_after,
            r.target_drop(),
            r.control_drop
        )?;
    }
    write_text(&cfg.out.join("intervention.csv"), &csv)?;
    write_json(&cfg.out.join("intervention.json"), &rep)
}

fn compare(cfg: &RunConfig, a: &Path, b: &Path) -> Result<()> {
    let pa = load_predictions(a)?;
    let pb = load_predictions(b)?;
    if pa.ids != pb.ids {
        bail!("prediction dumps cover different notes");
    }
    let l = pa.num_labels();
    let mut metrics = vec![
        Metric::MacroF1,
        Metric::MicroF1,
        Metric::MacroAuc,
        Metric::MicroAuc,
        Metric::MacroPrecision,
        Metric::MacroRecall,
        Metric::MicroPrecision,
        Metric::MicroRecall,
    ];
    for &k in cfg.evaluation.k_list.iter().filter(|&&k| k <= l) {
        metrics.push(Metric::PrecisionAt(k));
        metrics.push(Metric::RecallAt(k));
    }
    let seed = cfg.stat_seed();
    let mut results = Vec::new();
    let mut csv = String::from("metric,a,b,delta_point,ci_low,ci_high,p_two_sided\n");
    for m in metrics {
        let point = (m.eval(&pa), m.eval(&pb));
        let boot = paired_bootstrap(|p| m.eval(p), &pa, &pb, cfg.evaluation.bootstrap_b, seed);
        match (point, boot) {
            ((Ok(va), Ok(vb)), Ok(r)) => {
                writeln!(
                    csv,
                    "{},{va},{vb},{},{},{},{}",
                    m.name(),
                    r.delta_point,
                    r.ci_low,
                    r.ci_high,
                    r.p_two_sided
                )?;
                results.push(json!({"metric": m.name(), "a": va, "b": vb, "result": r}));
            }
            (point, boot) => {
                let err = [point.0.err(), point.1.err(), boot.err()]
                    .into_iter()
                    .flatten()
                    .next()
                    .map(|e| e.to_string())
                    .unwrap_or_default();
                warn!("{} skipped: {err}", m.name());
                results.push(json!({"metric": m.name(), "error": err}));
            }
        }
    }
    write_text(&cfg.out.join("compare.csv"), &csv)?;
    write_json(
        &cfg.out.join("compare.json"),
        &json!({
            "a": a.display().to_string(),
            "b": b.display().to_string(),
            "notes": pa.len(),
            "bootstrap_b": cfg.evaluation.bootstrap_b,
            "seed": seed,
            "metrics": results,
        }),
    )
}

fn read_json(path: &Path) -> Result<Option<Value>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    ))
}

fn report(cfg: &RunConfig, runs: &[PathBuf]) -> Result<()> {
    let mut all = BTreeMap::new();
    let mut curves = String::from("run,epoch,loss,val_macro_f1,val_micro_f1\n");
    let mut faith = String::from("run,metric,value,ci_low,ci_high\n");
    let mut scores = String::from("run,metric,value\n");
    for dir in runs {
        if !dir.is_dir() {
            bail!("run directory {} not found", dir.display());
        }
        let name = dir.display().to_string();
        let mut entry = BTreeMap::new();
        for file in [
            "train_report",
            "metrics",
            "interpret",
            "intervention",
            "compare",
            "pseudo_label_report",
        ] {
            if let Some(mut v) = read_json(&dir.join(format!("{file}.json")))? {
                if file == "intervention" {
                    if let Some(o) = v.as_object_mut() {
                        o.remove("records");
                    }
                }
                entry.insert(file, v);
            }
        }
        if let Some(Value::Array(rows)) = entry.get("train_report").and_then(|t| t.get("curves")) {
            for r in rows {
                writeln!(
                    curves,
                    "{name},{},{},{},{}",
                    r["epoch"], r["loss"], r["val_macro_f1"], r["val_micro_f1"]
                )?;
            }
        }
        if let Some(i) = entry.get("interpret") {
            for m in ["cstpr", "ccr", "cim_head", "cim_common_surface"] {
                let v = &i[m];
                writeln!(faith, "{name},{m},{},{},{}", v["value"], v["ci_low"], v["ci_high"])?;
            }
        }
        if let Some(i) = entry.get("intervention") {
            for m in ["mean_target_drop", "mean_control_drop", "mean_difference"] {
                writeln!(
                    faith,
                    "{name},intervention_{m},{},{},{}",
                    i[m], i["ci_low"], i["ci_high"]
                )?;
            }
        }
        if let Some(m) = entry.get("metrics") {
            for (k, v) in [
                ("macro_f1", &m["f1"]["macro_f1"]),
                ("micro_f1", &m["f1"]["micro_f1"]),
                ("macro_auc", &m["auc"]["macro_auc"]),
                ("micro_auc", &m["auc"]["micro_auc"]),
            ] {
                writeln!(scores, "{name},{k},{v}")?;
            }
        }
        if entry.is_empty() {
            warn!("{name}: no report files found");
        }
        all.insert(name, entry);
    }
    write_text(&cfg.out.join("plot_training_curves.csv"), &curves)?;
    write_text(&cfg.out.join("plot_interpretability.csv"), &faith)?;
    write_text(&cfg.out.join("plot_scores.csv"), &scores)?;
    write_json(&cfg.out.join("report.json"), &json!({ "runs": all }))
}
