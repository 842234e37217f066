//! Volume-side subcommands: phantom, ingest, preprocess, split, index.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use foramslice_core::curation::{split_specimens, Split, SplitParams};
use foramslice_core::matcher::{build_or_load, CacheStatus, IndexParams};
use foramslice_core::phantom::{generate, standard_corpus};
use foramslice_core::preprocess::{content_score, preprocess_pipeline};
use foramslice_core::volume_io::{extract_slice, load_volume, write_volume, Datatype, ManifestEntry};
use foramslice_core::{Axis, Manifest, PreprocessParams, SliceImage, SpecimenStats, Volume};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::util::{dedup_axes, print_json, table, write_json, UsageError};
use crate::{GlobalOpts, IndexArgs, IngestArgs, PhantomArgs, PreprocessArgs, PreprocessOpts, SliceFilterArgs, SplitArgs};

impl PreprocessOpts {
    pub fn params(&self, filter: &SliceFilterArgs) -> PreprocessParams {
        PreprocessParams {
            sensitivity: self.sensitivity,
            content_min_fraction: filter.min_content,
            target_size: self.size,
            denoise_radius: self.denoise,
            crop_margin: self.margin,
        }
    }
}

pub fn phantom(g: &GlobalOpts, a: PhantomArgs) -> anyhow::Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest = String::from("# path\tspecimen_id\tspecies\n");
    let mut written = Vec::new();
    for mut spec in standard_corpus() {
        // Seed 0 reproduces the standard corpus.
        spec.seed = spec.seed.wrapping_add(g.seed.wrapping_mul(1_000_003));
        let spec = spec.with_dims(a.dims);
        let volume = generate(&spec);
        let file = format!("{}.nii", spec.specimen_id);
        write_volume(&volume, a.out.join(&file))?;
        manifest.push_str(&format!("{file}\t{}\t{}\n", volume.specimen_id, volume.species));
        written.push(json!({"specimen_id": volume.specimen_id, "species": volume.species, "path": file, "dims": a.dims}));
    }
    let manifest_path = a.out.join("manifest.tsv");
    fs::write(&manifest_path, manifest).with_context(|| format!("writing {}", manifest_path.display()))?;
    if g.json {
        print_json(&json!({"manifest": manifest_path, "volumes": written}))?;
    } else {
        println!("wrote {} volumes and {}", written.len(), manifest_path.display());
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxisUsage {
    pub axis: Axis,
    pub total: usize,
    pub usable: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeReport {
    pub specimen_id: String,
    pub species: String,
    pub dims: [usize; 3],
    pub datatype: Datatype,
    pub degenerate: bool,
    pub axes: Vec<AxisUsage>,
    pub usable: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestFailure {
    pub specimen_id: String,
    pub error: String,
}

/// Slices per axis passing the content filter.
pub fn usable_slices(volume: &Volume, filter: &SliceFilterArgs) -> Vec<AxisUsage> {
    dedup_axes(&filter.axes)
        .into_iter()
        .map(|axis| {
            let total = volume.header.dim(axis);
            let usable = (0..total)
                .into_par_iter()
                .filter(|&i| {
                    extract_slice(volume, axis, i)
                        .map(|s| content_score(&s) >= filter.min_content)
                        .unwrap_or(false)
                })
                .count();
            AxisUsage { axis, total, usable }
        })
        .collect()
}

fn ingest_manifest(manifest: &Manifest, filter: &SliceFilterArgs) -> (Vec<VolumeReport>, Vec<IngestFailure>) {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for entry in &manifest.entries {
        match load_volume(manifest.resolve(entry), entry) {
            Ok(v) => {
                let axes = usable_slices(&v, filter);
                log::info!("{}: {} usable slices", v.specimen_id, axes.iter().map(|a| a.usable).sum::<usize>());
                reports.push(VolumeReport {
                    usable: axes.iter().map(|a| a.usable).sum(),
                    specimen_id: v.specimen_id.clone(),
                    species: v.species.clone(),
                    dims: v.dims(),
                    datatype: v.header.datatype,
                    degenerate: v.degenerate,
                    axes,
                });
            }
            Err(e) => {
                log::warn!("{}: {e}", entry.specimen_id);
                failures.push(IngestFailure {
                    specimen_id: entry.specimen_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    (reports, failures)
}

fn specimen_stats(reports: &[VolumeReport]) -> Vec<SpecimenStats> {
    reports
        .iter()
        .map(|r| SpecimenStats::new(&r.specimen_id, &r.species, r.usable as u64))
        .collect()
}

pub fn ingest(g: &GlobalOpts, a: IngestArgs) -> anyhow::Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let (reports, failures) = ingest_manifest(&manifest, &a.filter);
    if let Some(out) = &a.out {
        write_json(out, &specimen_stats(&reports))?;
    }
    if g.json {
        print_json(&json!({"volumes": reports, "failures": failures}))?;
    } else {
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                vec![
                    r.specimen_id.clone(),
                    r.species.clone(),
                    format!("{}x{}x{}", r.dims[0], r.dims[1], r.dims[2]),
                    format!("{:?}", r.datatype),
                    r.axes.iter().map(|x| format!("{}:{}/{}", x.axis, x.usable, x.total)).collect::<Vec<_>>().join(" "),
                    if r.degenerate { "degenerate".into() } else { String::new() },
                ]
            })
            .collect();
        print!("{}", table(&["specimen", "species", "dims", "type", "usable/total", ""], &rows));
        for f in &failures {
            println!("FAILED {}: {}", f.specimen_id, f.error);
        }
    }
    if !failures.is_empty() && reports.is_empty() {
        bail!("no volume in {} could be loaded", a.manifest.display());
    }
    Ok(())
}

enum Source {
    Volume(PathBuf),
    Image(PathBuf),
}

fn classify_path(p: &Path) -> Option<Source> {
    let ext = p.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "nii" => Some(Source::Volume(p.to_path_buf())),
        "png" | "jpg" | "jpeg" => Some(Source::Image(p.to_path_buf())),
        _ => None,
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "slice".into())
}

pub fn preprocess(_g: &GlobalOpts, a: PreprocessArgs) -> anyhow::Result<()> {
    let params = a.opts.params(&a.filter);
    params.validate().map_err(|e| UsageError(e.to_string()))?;
    let sources: Vec<Source> = if a.input.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&a.input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        paths.sort();
        paths.iter().filter_map(|p| classify_path(p)).collect()
    } else {
        match classify_path(&a.input) {
            Some(s) => vec![s],
            None => bail!("{} is not a .nii, .png or .jpg file", a.input.display()),
        }
    };
    if sources.is_empty() {
        bail!("no .nii, .png or .jpg inputs in {}", a.input.display());
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let stdout = std::io::stdout();
    let (mut kept, mut seen) = (0usize, 0usize);
    for source in sources {
        let slices: Vec<(String, serde_json::Value, SliceImage)> = match &source {
            Source::Image(p) => {
                let img = SliceImage::open(p).with_context(|| format!("reading {}", p.display()))?;
                vec![(stem(p), json!({"source": p}), img)]
            }
            Source::Volume(p) => {
                let entry = ManifestEntry {
                    path: p.clone(),
                    specimen_id: stem(p),
                    species: String::new(),
                };
                let vol = load_volume(p, &entry).with_context(|| format!("reading {}", p.display()))?;
                let mut out = Vec::new();
                for axis in dedup_axes(&a.filter.axes) {
                    for i in 0..vol.header.dim(axis) {
                        let img = extract_slice(&vol, axis, i)?;
                        let id = format!("{}_{}_{:04}", entry.specimen_id, axis, i);
                        out.push((id, json!({"source": p, "axis": axis, "index": i}), img));
                    }
                }
                out
            }
        };
        let results: Vec<anyhow::Result<serde_json::Value>> = slices
            .into_par_iter()
            .map(|(id, mut record, img)| {
                let out = preprocess_pipeline(&img, &params);
                let written = match &out.image {
                    Some(processed) => {
                        let path = a.out.join(format!("{id}.png"));
                        processed.save_png(&path)?;
                        Some(path)
                    }
                    None => None,
                };
                record["slice_id"] = json!(id);
                record["output"] = json!(written);
                record["report"] = serde_json::to_value(&out.report)?;
                Ok(record)
            })
            .collect();
        let mut lock = stdout.lock();
        for r in results {
            let r = r?;
            seen += 1;
            if !r["output"].is_null() {
                kept += 1;
            }
            writeln!(lock, "{}", serde_json::to_string(&r)?)?;
        }
    }
    log::info!("kept {kept} of {seen} slices");
    eprintln!("kept {kept} of {seen} slices; PNGs in {}", a.out.display());
    Ok(())
}

pub fn split(g: &GlobalOpts, a: SplitArgs) -> anyhow::Result<()> {
    let stats: Vec<SpecimenStats> = match (&a.manifest, &a.stats) {
        (Some(m), _) => {
            let manifest = Manifest::load(m)?;
            let (reports, failures) = ingest_manifest(&manifest, &a.filter);
            if let Some(f) = failures.first() {
                bail!("cannot split with unreadable specimens ({}: {})", f.specimen_id, f.error);
            }
            specimen_stats(&reports)
        }
        (None, Some(s)) => {
            let text = fs::read_to_string(s).with_context(|| format!("reading {}", s.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", s.display()))?
        }
        (None, None) => return Err(UsageError("one of --manifest or --stats is required".into()).into()),
    };
    let params = SplitParams {
        targets: a.targets,
        weights: a.weights,
        tolerance: a.tolerance,
        seed: g.seed,
        ..SplitParams::default()
    };
    params.validate().map_err(|e| UsageError(e.to_string()))?;
    let assignment = split_specimens(&stats, &params)?;
    if let Some(out) = &a.out {
        write_json(out, &assignment)?;
    }
    if g.json {
        print_json(&assignment)?;
        return Ok(());
    }
    let rows: Vec<Vec<String>> = Split::ALL
        .iter()
        .map(|&s| {
            let sum = assignment.summary(s);
            vec![
                s.to_string(),
                sum.total.to_string(),
                format!("{:.3}", sum.fraction),
                sum.cv.map_or("-".into(), |cv| format!("{cv:.2}")),
                assignment.specimens_in(s).collect::<Vec<_>>().join(","),
            ]
        })
        .collect();
    print!("{}", table(&["split", "slices", "fraction", "CV%", "specimens"], &rows));
    println!(
        "objective {:.4}  bound violation {:.4}  {} ({} evaluations)",
        assignment.objective,
        assignment.bound_violation,
        if assignment.exhaustive { "exhaustive" } else { "local search" },
        assignment.evaluations
    );
    if !assignment.infeasible_species.is_empty() {
        println!("species with fewer than three specimens: {}", assignment.infeasible_species.join(", "));
    }
    Ok(())
}

pub fn index(g: &GlobalOpts, a: IndexArgs) -> anyhow::Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let params = IndexParams {
        preprocess: a.opts.params(&a.filter),
        axes: dedup_axes(&a.filter.axes),
        ..IndexParams::default()
    };
    params.validate().map_err(|e| UsageError(e.to_string()))?;
    let mut volumes = Vec::new();
    let mut failures = Vec::new();
    for (entry, loaded) in manifest.entries.iter().zip(manifest.load_all()) {
        match loaded {
            Ok(v) => volumes.push(v),
            Err(e) => {
                log::warn!("{}: {e}", entry.specimen_id);
                failures.push(IngestFailure {
                    specimen_id: entry.specimen_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if volumes.is_empty() {
        bail!("no volume in {} could be loaded", a.manifest.display());
    }
    if a.force && a.out.exists() {
        fs::remove_file(&a.out).with_context(|| format!("removing {}", a.out.display()))?;
    }
    let (index, status) = build_or_load(&volumes, &params, &a.out)?;
    let status_text = match &status {
        CacheStatus::Hit => "reused".to_string(),
        CacheStatus::Rebuilt(why) => format!("built ({why})"),
    };
    if g.json {
        print_json(&json!({
            "path": a.out,
            "status": status_text,
            "content_hash": index.content_hash,
            "volumes": index.volumes,
            "slices": index.len(),
            "failures": failures,
        }))?;
    } else {
        let rows: Vec<Vec<String>> = index
            .volumes
            .iter()
            .map(|v| vec![v.volume_id.clone(), v.species.clone(), v.kept().to_string(), v.total().to_string()])
            .collect();
        print!("{}", table(&["volume", "species", "indexed", "slices"], &rows));
        println!("{} slices, {status_text}: {}", index.len(), a.out.display());
        for f in &failures {
            println!("FAILED {}: {}", f.specimen_id, f.error);
        }
    }
    Ok(())
}
