//! Query-side subcommands: match, classify, eval, metric, serve.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use foramslice_core::classify::{
    combine_majority, combine_or_fallback, parse_predictions_tsv, predict_all, top_k, ClassifyError, EnsembleConfig,
    Fallback, HuNearestProvider, PredictRequest, Provider, TsvProvider,
};
use foramslice_core::eval::{evaluate, load_records};
use foramslice_core::matcher::{load_cache, match_query as run_match, MatchParams};
use foramslice_core::metrics::{
    dice, hu_distance, hu_moments, ncc, orb_detect, orb_match_score, ssim, MetricKind, MetricScore, OrbParams,
    SsimParams,
};
use foramslice_core::preprocess::segment_foreground;
use foramslice_core::{ClassProbabilities, LabelSet, MatchQuery, PreprocessParams, SliceImage};
use foramslice_service::ServiceConfig;
use serde_json::json;

use crate::util::{dedup_axes, print_json, table, UsageError};
use crate::{ClassifyArgs, EvalArgs, GlobalOpts, MatchArgs, MetricArgs, ServeArgs};

fn open_image(path: &Path) -> anyhow::Result<SliceImage> {
    SliceImage::open(path).with_context(|| format!("reading {}", path.display()))
}

pub fn match_query(g: &GlobalOpts, a: MatchArgs) -> anyhow::Result<()> {
    let params = MatchParams {
        candidate_volume_ids: a.subset.clone(),
        axes: a.axes.as_deref().map(dedup_axes).unwrap_or_default(),
        top_k_coarse: a.coarse_k,
        top_n: a.topk,
        coarse_rotation_step: a.rotation_step,
        ..MatchParams::default()
    };
    params.validate().map_err(|e| UsageError(e.to_string()))?;
    if a.topk == 0 {
        return Err(UsageError("--topk must be positive".into()).into());
    }
    let index = load_cache(&a.corpus, None).with_context(|| format!("loading {}", a.corpus.display()))?;
    if let Some(ids) = &a.subset {
        if let Some(bad) = ids.iter().find(|id| !index.volumes.iter().any(|v| &v.volume_id == *id)) {
            bail!("volume {bad} is not in {}", a.corpus.display());
        }
    }
    let image = open_image(&a.query)?;
    let query = MatchQuery::from_image(image, &index.params.preprocess, params)?;
    let outcome = run_match(&query, &index)?;
    let t = &outcome.timing;
    if g.json {
        print_json(&outcome.results)?;
        eprintln!("{}", serde_json::to_string(t)?);
    } else {
        let rows: Vec<Vec<String>> = outcome
            .results
            .iter()
            .enumerate()
            .map(|(i, r)| {
                vec![
                    (i + 1).to_string(),
                    r.volume_id.clone(),
                    r.species.clone(),
                    r.axis.to_string(),
                    r.slice_index.to_string(),
                    format!("{:.0}", r.best_rotation),
                    format!("{:.4}", r.combined),
                    format!("{:.4}", r.ssim),
                    r.ncc.map_or("-".into(), |v| format!("{v:.4}")),
                    r.orb.map_or("-".into(), |v| format!("{v:.4}")),
                    format!("{:.4}", r.dice),
                ]
            })
            .collect();
        print!(
            "{}",
            table(&["#", "volume", "species", "axis", "slice", "rot", "combined", "ssim", "ncc", "orb", "dice"], &rows)
        );
        eprintln!(
            "scanned {} slices, {} candidates: coarse {:.0} ms, fine {:.0} ms, total {:.0} ms ({:.0} slices/s)",
            t.slices_scanned, t.candidates, t.coarse_ms, t.fine_ms, t.total_ms, t.slices_per_sec
        );
    }
    Ok(())
}

fn default_ensemble(primary: &str) -> EnsembleConfig {
    EnsembleConfig {
        primary_provider_id: primary.to_string(),
        rules: Vec::new(),
        fallback: Fallback::Majority,
    }
}

pub fn classify(g: &GlobalOpts, a: ClassifyArgs) -> anyhow::Result<()> {
    let labels = LabelSet::species();
    let mut providers: Vec<Box<dyn Provider>> = Vec::new();
    for (id, path) in &a.preds {
        providers.push(Box::new(
            TsvProvider::open(id.clone(), path, labels.clone()).with_context(|| format!("reading {}", path.display()))?,
        ));
    }
    if let Some(index_path) = &a.index {
        let index = load_cache(index_path, None).with_context(|| format!("loading {}", index_path.display()))?;
        providers.push(Box::new(HuNearestProvider::from_index(&index, labels.clone())?));
    }
    if providers.is_empty() {
        return Err(UsageError("give at least one --pred ID=PATH, or --image with --index".into()).into());
    }
    if a.majority && providers.len() < 2 {
        return Err(UsageError("--majority needs at least two providers".into()).into());
    }
    if a.top == 0 || a.top > labels.len() {
        return Err(UsageError(format!("--top must be in 1..={}", labels.len())).into());
    }
    let ensemble = match &a.ensemble {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cfg: EnsembleConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            cfg.validate(&labels)?;
            for id in cfg.provider_ids() {
                if !providers.iter().any(|p| p.id() == id) {
                    bail!("ensemble refers to provider {id}, which was not given");
                }
            }
            cfg
        }
        None => default_ensemble(providers[0].id()),
    };

    let requests: Vec<PredictRequest> = match &a.image {
        Some(p) => {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            vec![PredictRequest::new(id, open_image(p)?)]
        }
        None => {
            if a.preds.is_empty() {
                return Err(UsageError("batch mode needs --pred tables".into()).into());
            }
            let path = &a.preds[0].1;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_predictions_tsv(&text, labels.len())?
                .into_iter()
                .map(|(id, _)| PredictRequest::new(id, SliceImage::filled(1, 1, 0.0)))
                .collect()
        }
    };

    let refs: Vec<&dyn Provider> = providers.iter().map(|p| p.as_ref()).collect();
    let mut table_out = format!("slice_id\t{}\n", labels.as_slice().join("\t"));
    let mut records = Vec::new();
    let mut failed = 0usize;
    for req in &requests {
        let mut predictions: Vec<ClassProbabilities> = Vec::new();
        let mut errors = Vec::new();
        for r in predict_all(&refs, req) {
            match r.and_then(|p| p.expect_len(&labels)) {
                Ok(p) => predictions.push(p),
                Err(e) => errors.push(e.to_string()),
            }
        }
        if predictions.is_empty() {
            failed += 1;
            log::warn!("{}: every provider failed", req.slice_id);
            records.push(json!({"slice_id": req.slice_id, "errors": errors}));
            continue;
        }
        let (combined, degraded) = if a.majority {
            match combine_majority(&predictions) {
                Ok(v) => (v.probs, false),
                Err(ClassifyError::TooFewProviders(_)) => (predictions[0].clone(), true),
                Err(e) => return Err(e.into()),
            }
        } else {
            match combine_or_fallback(&predictions, &ensemble, &labels) {
                Ok(o) => (o.probs, o.degraded),
                Err(ClassifyError::MissingProvider(_)) => (predictions[0].clone(), true),
                Err(e) => return Err(e.into()),
            }
        };
        let top = top_k(&combined, &labels, a.top)?;
        table_out.push_str(&req.slice_id);
        for p in &combined.probs {
            table_out.push_str(&format!("\t{p}"));
        }
        table_out.push('\n');
        records.push(json!({
            "slice_id": req.slice_id,
            "top": top,
            "probs": combined.probs,
            "degraded": degraded,
            "errors": errors,
        }));
    }

    if let Some(out) = &a.out {
        fs::write(out, &table_out).with_context(|| format!("writing {}", out.display()))?;
    }
    if g.json {
        print_json(&records)?;
    } else {
        for r in &records {
            let Some(top) = r["top"].as_array() else {
                println!("{}  unavailable", r["slice_id"].as_str().unwrap_or_default());
                continue;
            };
            let ranked: Vec<String> = top
                .iter()
                .map(|t| {
                    format!(
                        "{} {:.2}%",
                        t["label"].as_str().unwrap_or_default(),
                        t["confidence"].as_f64().unwrap_or(0.0) * 100.0
                    )
                })
                .collect();
            let flag = if r["degraded"].as_bool() == Some(true) { "  (degraded)" } else { "" };
            println!("{}  {}{flag}", r["slice_id"].as_str().unwrap_or_default(), ranked.join(", "));
        }
    }
    if failed == requests.len() {
        bail!("no slice could be classified");
    }
    Ok(())
}

pub fn eval(g: &GlobalOpts, a: EvalArgs) -> anyhow::Result<()> {
    let labels = LabelSet::species();
    let records = load_records(&a.pred, &a.labels, &labels)?;
    let report = evaluate(&records, &labels)?;
    if g.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_markdown());
    }
    Ok(())
}

pub fn metric(_g: &GlobalOpts, a: MetricArgs) -> anyhow::Result<()> {
    let ia = open_image(&a.a)?;
    let ib = open_image(&a.b)?;
    let seg = PreprocessParams {
        sensitivity: a.sensitivity,
        ..PreprocessParams::default()
    };
    seg.validate().map_err(|e| UsageError(e.to_string()))?;
    let score = match a.kind {
        MetricKind::Ssim => ssim(&ia, &ib, &SsimParams::default())?,
        MetricKind::Ncc => ncc(&ia, &ib)?,
        MetricKind::Dice => dice(&segment_foreground(&ia, &seg)?, &segment_foreground(&ib, &seg)?)?,
        MetricKind::Hu => {
            let ha = hu_moments(&segment_foreground(&ia, &seg)?)?;
            let hb = hu_moments(&segment_foreground(&ib, &seg)?)?;
            MetricScore::valid(MetricKind::Hu, hu_distance(&ha, &hb))
        }
        MetricKind::Orb => {
            let p = OrbParams::default();
            orb_match_score(&orb_detect(&ia, &p), &orb_detect(&ib, &p), &p)
        }
    };
    print_json(&json!({
        "kind": score.kind,
        "value": score.value,
        "valid": score.valid,
        "a": a.a,
        "b": a.b,
    }))
}

pub fn serve(g: &GlobalOpts, a: ServeArgs) -> anyhow::Result<()> {
    let mut config = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(h) = a.host {
        config.host = h;
    }
    if let Some(p) = a.port {
        config.port = p;
    }
    if let Some(i) = a.index {
        config.index_path = Some(i);
    }
    config.validate()?;
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = g.threads {
        rt.worker_threads(n);
    }
    let rt = rt.enable_all().build()?;
    eprintln!("serving on http://{}:{}", config.host, config.port);
    rt.block_on(foramslice_service::serve(config))?;
    Ok(())
}
