use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use duotrain::audio::{fit_cmvn, write_features, CmvnStats, FeatureMatrix};
use duotrain::eval::{bleu, corpus_wer, decode_many};
use duotrain::model::build_model;
use duotrain::synth::{gen_synth as generate, SynthConfig};
use duotrain::text::{build_phoneme_vocab, learn_subwords, Lexicon, PhonemeVocab, SubwordVocab};
use duotrain::trainer::{
    average_checkpoints, load_features, read_manifest, read_text_corpus, train as run_training, write_manifest, Checkpoint,
    InputRepr, ManifestRow, PrimaryTask, SourceEncoder, SpeechItem, TextCorpus, TextItem, TextTask, MANIFEST_HEADER,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::{Field, Invalid, Metric};

pub const DECODE_HEADER: &str = "id\thypothesis\tnormalized_score";

const SUBWORD_VOCAB: &str = "subword.vocab";
const SUBWORD_MERGES: &str = "subword.merges";
const SOURCE_VOCAB: &str = "source.vocab";
const CMVN: &str = "cmvn.json";

fn existing<'a>(path: Option<&'a PathBuf>, key: &str) -> Result<&'a Path, Invalid> {
    let p = path.ok_or_else(|| Invalid(format!("config field `{key}` is required")))?;
    if !p.exists() {
        return Err(Invalid(format!("`{key}`: {} does not exist", p.display())));
    }
    Ok(p)
}

fn artifact(cfg: &RunConfig, name: &str, producer: &str) -> Result<PathBuf, Invalid> {
    let p = cfg.artifact(name);
    if !p.exists() {
        return Err(Invalid(format!("{} is missing; run `{producer}` first", p.display())));
    }
    Ok(p)
}

fn target_text(row: &ManifestRow, task: PrimaryTask) -> &str {
    match task {
        PrimaryTask::Asr => &row.transcript,
        PrimaryTask::St => &row.translation,
    }
}

fn load_lexicon(cfg: &RunConfig) -> Result<Lexicon> {
    let p = existing(cfg.data.lexicon.as_ref(), "data.lexicon")?;
    Ok(Lexicon::open(p)?)
}

fn load_subwords(cfg: &RunConfig) -> Result<SubwordVocab> {
    let v = artifact(cfg, SUBWORD_VOCAB, "prepare-text")?;
    let m = artifact(cfg, SUBWORD_MERGES, "prepare-text")?;
    Ok(SubwordVocab::load(v, m)?)
}

fn load_cmvn(cfg: &RunConfig) -> Result<Option<CmvnStats>> {
    if !cfg.data.apply_cmvn {
        return Ok(None);
    }
    let p = cfg.artifact(CMVN);
    if !p.exists() {
        return Err(Invalid(format!(
            "{} is missing; run `prepare-audio` first or set data.apply_cmvn to false",
            p.display()
        ))
        .into());
    }
    let text = std::fs::read_to_string(&p).with_context(|| p.display().to_string())?;
    Ok(Some(serde_json::from_str(&text).with_context(|| p.display().to_string())?))
}

fn text_corpus(cfg: &RunConfig) -> Result<Option<TextCorpus>> {
    if cfg.task.text_task == TextTask::None {
        return Ok(None);
    }
    let p = existing(cfg.data.text_corpus.as_ref(), "data.text_corpus")?;
    let corpus = read_text_corpus(p)?;
    match (&corpus, cfg.task.text_task) {
        (TextCorpus::Monolingual(_), TextTask::Mt) => {
            Err(Invalid(format!("the mt text task needs a tab-separated parallel corpus; {} is monolingual", p.display())).into())
        }
        // Denoising and passthrough reconstruct the source side.
        (TextCorpus::Parallel(pairs), TextTask::Denoise | TextTask::Passthrough) => {
            Ok(Some(TextCorpus::Monolingual(pairs.iter().map(|(s, _)| s.clone()).collect())))
        }
        _ => Ok(Some(corpus)),
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    std::fs::write(path, body).with_context(|| path.display().to_string())
}

pub fn prepare_text(cfg: &RunConfig) -> Result<()> {
    let manifest = existing(cfg.data.train_manifest.as_ref(), "data.train_manifest")?;
    let rows = read_manifest(manifest)?;
    let corpus = text_corpus(cfg)?;
    let mut targets: Vec<&str> = rows.iter().map(|r| target_text(r, cfg.task.primary_task)).collect();
    let mut sources: Vec<&str> = rows.iter().map(|r| r.transcript.as_str()).collect();
    match &corpus {
        Some(TextCorpus::Monolingual(lines)) => {
            targets.extend(lines.iter().map(String::as_str));
            sources.extend(lines.iter().map(String::as_str));
        }
        Some(TextCorpus::Parallel(pairs)) => {
            targets.extend(pairs.iter().map(|(_, t)| t.as_str()));
            sources.extend(pairs.iter().map(|(s, _)| s.as_str()));
        }
        None => {}
    }
    let subwords = learn_subwords(targets, cfg.model.subword_vocab_size)?;
    let source = match cfg.task.text_input_repr {
        InputRepr::Phoneme => build_phoneme_vocab(&load_lexicon(cfg)?, cfg.data.word_marking),
        InputRepr::Character => PhonemeVocab::characters(sources, cfg.data.word_marking),
    };
    std::fs::create_dir_all(&cfg.data.artifacts_dir).with_context(|| cfg.data.artifacts_dir.display().to_string())?;
    subwords.save(cfg.artifact(SUBWORD_VOCAB), cfg.artifact(SUBWORD_MERGES))?;
    write_file(&cfg.artifact(SOURCE_VOCAB), &source.to_lines())?;
    log::info!(
        "{} subword tokens, {} source tokens written to {}",
        subwords.len(),
        source.len(),
        cfg.data.artifacts_dir.display()
    );
    Ok(())
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn prepare_audio(cfg: &RunConfig, extra: &[PathBuf]) -> Result<()> {
    let train = existing(cfg.data.train_manifest.as_ref(), "data.train_manifest")?;
    for m in extra {
        if !m.exists() {
            return Err(Invalid(format!("manifest {} does not exist", m.display())).into());
        }
    }
    let mut train_features: Vec<FeatureMatrix> = Vec::new();
    for (k, manifest) in std::iter::once(train).chain(extra.iter().map(PathBuf::as_path)).enumerate() {
        let rows = read_manifest(manifest)?;
        let stem = manifest.file_stem().map_or("manifest".into(), |s| s.to_string_lossy().into_owned());
        let mut out_rows = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let f = load_features(&row.audio_path(manifest), &cfg.features, None)?;
            if row.n_frames != 0 && row.n_frames != f.frames() {
                bail!("{} line {}: {} frames, manifest says {}", manifest.display(), i + 2, f.frames(), row.n_frames);
            }
            let rel = format!("feats/{}/{}.feat", file_safe(&stem), file_safe(&row.id));
            let dest = cfg.artifact(&rel);
            if let Some(dir) = dest.parent() {
                std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
            }
            write_features(&dest, &f)?;
            out_rows.push(ManifestRow {
                audio: rel,
                n_frames: f.frames(),
                ..row.clone()
            });
            if k == 0 {
                train_features.push(f);
            }
        }
        let name = manifest.file_name().map_or("manifest.tsv".into(), |s| s.to_string_lossy().into_owned());
        let out = cfg.artifact(&name);
        if out.canonicalize().ok() == manifest.canonicalize().ok() && out.exists() {
            bail!("refusing to overwrite the input manifest {}", manifest.display());
        }
        write_manifest(&out, &out_rows)?;
        log::info!("cached {} utterances; manifest {}", out_rows.len(), out.display());
    }
    let stats = fit_cmvn(train_features.iter())?;
    write_file(&cfg.artifact(CMVN), &serde_json::to_string(&stats)?)?;
    log::info!("cmvn fitted on {} frames", stats.count);
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let manifest = existing(cfg.data.train_manifest.as_ref(), "data.train_manifest")?;
    let subwords = load_subwords(cfg)?;
    let source_vocab = PhonemeVocab::load(artifact(cfg, SOURCE_VOCAB, "prepare-text")?)?;
    let cmvn = load_cmvn(cfg)?;
    let corpus = text_corpus(cfg)?;
    for (key, p) in [
        ("train.init_encoder_ckpt", &cfg.train.init_encoder_ckpt),
        ("train.init_decoder_ckpt", &cfg.train.init_decoder_ckpt),
        ("train.resume_from", &cfg.train.resume_from),
    ] {
        if p.is_some() {
            existing(p.as_ref(), key)?;
        }
    }

    let rows = read_manifest(manifest)?;
    let speech = SpeechItem::load_all(manifest, &rows, cfg.task.primary_task, &subwords, &cfg.features, cmvn.as_ref())?;
    if let Some(bad) = speech.iter().find(|s| s.features.dim() != cfg.model.input_dim) {
        return Err(Invalid(format!(
            "{} has {}-dimensional features but model.input_dim is {}",
            bad.id,
            bad.features.dim(),
            cfg.model.input_dim
        ))
        .into());
    }
    let text = match &corpus {
        Some(c) => {
            let source = match cfg.task.text_input_repr {
                InputRepr::Phoneme => SourceEncoder::Phoneme {
                    lexicon: load_lexicon(cfg)?,
                    vocab: source_vocab.clone(),
                },
                InputRepr::Character => SourceEncoder::Character {
                    vocab: source_vocab.clone(),
                },
            };
            TextItem::from_corpus(c, &source, &subwords)?
        }
        None => Vec::new(),
    };

    let mut model_cfg = cfg.model.clone();
    model_cfg.phoneme_vocab_size = source_vocab.len();
    model_cfg.subword_vocab_size = subwords.len();
    let mut train_cfg = cfg.train.clone();
    let dir = train_cfg.checkpoint_dir.get_or_insert_with(|| cfg.artifact("checkpoints")).clone();
    std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
    if train_cfg.log_path.is_none() {
        train_cfg.log_path = Some(dir.join("train_log.jsonl"));
    }
    let mut resolved = cfg.clone();
    resolved.model = model_cfg.clone();
    resolved.train = train_cfg.clone();
    write_file(&dir.join("config.json"), &serde_json::to_string_pretty(&resolved)?)?;

    let model = build_model(&model_cfg, train_cfg.seed)?;
    log::info!("{}", model.param_breakdown());
    log::info!("{} speech utterances, {} text sentences", speech.len(), text.len());
    let out = run_training(&train_cfg, &cfg.task, model, &speech, &text)?;
    for e in &out.epochs {
        log::info!(
            "epoch {}: speech loss {:.4} ({} steps), text loss {:.4} ({} steps)",
            e.epoch,
            e.speech_loss,
            e.speech_steps,
            e.text_loss,
            e.text_steps
        );
    }
    if !out.checkpoints.is_empty() {
        let n = train_cfg.average_last.min(out.checkpoints.len());
        let avg = average_checkpoints(&out.checkpoints[out.checkpoints.len() - n..])?;
        let p = dir.join("average.dtckpt");
        avg.save(&p)?;
        log::info!("averaged the last {n} checkpoints into {}", p.display());
    }
    Ok(())
}

pub fn average(inputs: &[PathBuf], dir: Option<&Path>, last: usize, output: &Path) -> Result<()> {
    let paths: Vec<PathBuf> = match dir {
        Some(d) => {
            if last == 0 {
                return Err(Invalid("--last must be at least 1".into()).into());
            }
            let mut found: Vec<PathBuf> = std::fs::read_dir(d)
                .map_err(|e| Invalid(format!("{}: {e}", d.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("checkpoint_") && n.ends_with(".dtckpt"))
                })
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(Invalid(format!("no checkpoint_*.dtckpt files in {}", d.display())).into());
            }
            let keep = last.min(found.len());
            found.split_off(found.len() - keep)
        }
        None => inputs.to_vec(),
    };
    if paths.is_empty() {
        return Err(Invalid("give --input checkpoints or --dir".into()).into());
    }
    if let Some(missing) = paths.iter().find(|p| !p.exists()) {
        return Err(Invalid(format!("{} does not exist", missing.display())).into());
    }
    average_checkpoints(&paths)?.save(output)?;
    log::info!("averaged {} checkpoints into {}", paths.len(), output.display());
    Ok(())
}

pub fn decode(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, output: &Path) -> Result<()> {
    for p in [checkpoint, manifest] {
        if !p.exists() {
            return Err(Invalid(format!("{} does not exist", p.display())).into());
        }
    }
    let subwords = load_subwords(cfg)?;
    let cmvn = load_cmvn(cfg)?;
    let model = Checkpoint::load(checkpoint)?.to_model()?;
    if model.config.subword_vocab_size != subwords.len() {
        return Err(Invalid(format!(
            "checkpoint has {} output tokens but the subword vocabulary has {}",
            model.config.subword_vocab_size,
            subwords.len()
        ))
        .into());
    }
    let rows = read_manifest(manifest)?;
    let feats = rows
        .iter()
        .map(|r| load_features(&r.audio_path(manifest), &cfg.features, cmvn.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&FeatureMatrix> = feats.iter().collect();
    let hyps = decode_many(&model, &refs, &cfg.decode.beam())?;
    let mut out = format!("{DECODE_HEADER}\n");
    for (r, h) in rows.iter().zip(&hyps) {
        let _ = writeln!(out, "{}\t{}\t{:.6}", r.id, subwords.decode(&h.tokens), h.normalized_score);
    }
    write_file(output, &out)?;
    log::info!("decoded {} utterances into {}", rows.len(), output.display());
    Ok(())
}

/// Sentences of a plain, manifest or decode-output file, with ids when the
/// format has them.
fn read_sentences(path: &Path, field: Field) -> Result<(Option<Vec<String>>, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    let first = text.lines().next().unwrap_or("");
    if first == MANIFEST_HEADER {
        let rows = read_manifest(path)?;
        let ids = rows.iter().map(|r| r.id.clone()).collect();
        let texts = rows
            .into_iter()
            .map(|r| match field {
                Field::Transcript => r.transcript,
                Field::Translation => r.translation,
            })
            .collect();
        return Ok((Some(ids), texts));
    }
    if first == DECODE_HEADER {
        let mut ids = Vec::new();
        let mut texts = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                bail!("{} line {}: expected 3 tab-separated columns", path.display(), i + 1);
            }
            ids.push(cols[0].to_string());
            texts.push(cols[1].to_string());
        }
        return Ok((Some(ids), texts));
    }
    Ok((None, text.lines().map(str::to_string).collect()))
}

pub fn score(metric: Metric, reference: &Path, hyp: &Path, field: Field, output: Option<&Path>) -> Result<()> {
    let (ref_ids, refs) = read_sentences(reference, field)?;
    let (hyp_ids, hyps) = read_sentences(hyp, field)?;
    let hyps = match (ref_ids, hyp_ids) {
        (Some(rids), Some(hids)) => {
            let by_id: HashMap<&str, &String> = hids.iter().map(String::as_str).zip(&hyps).collect();
            rids.iter()
                .map(|id| by_id.get(id.as_str()).map(|h| (*h).clone()).ok_or_else(|| Invalid(format!("no hypothesis for {id}"))))
                .collect::<Result<Vec<_>, _>>()?
        }
        _ => hyps,
    };
    if refs.len() != hyps.len() {
        return Err(Invalid(format!("{} references but {} hypotheses", refs.len(), hyps.len())).into());
    }
    let report = match metric {
        Metric::Wer => {
            let w = corpus_wer(refs.iter().map(String::as_str).zip(hyps.iter().map(String::as_str)))?;
            json!({
                "metric": "wer",
                "value": w.wer(),
                "breakdown": {
                    "substitutions": w.substitutions,
                    "deletions": w.deletions,
                    "insertions": w.insertions,
                    "reference_words": w.reference_words,
                },
            })
        }
        Metric::Bleu => {
            let b = bleu(&refs, &hyps)?;
            json!({
                "metric": "bleu",
                "value": b.score,
                "breakdown": {
                    "precisions": b.precisions,
                    "brevity_penalty": b.brevity_penalty,
                    "hypothesis_length": b.hypothesis_length,
                    "reference_length": b.reference_length,
                },
            })
        }
    };
    let line = serde_json::to_string(&report)?;
    println!("{line}");
    if let Some(p) = output {
        write_file(p, &format!("{line}\n"))?;
    }
    Ok(())
}

pub fn gen_synth(out: &Path, cfg: &SynthConfig) -> Result<()> {
    let corpus = generate(cfg)?;
    let written = corpus.write(out)?;
    log::info!(
        "{} training, {} test utterances and {} text sentences in {} ({} files)",
        corpus.train.len(),
        corpus.test.len(),
        corpus.text.len(),
        out.display(),
        written.len()
    );
    Ok(())
}
