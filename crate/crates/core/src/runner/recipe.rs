//! One seed's worth of staged training, independent of the filesystem.

use crate::encoding::Vocabulary;
use crate::error::{Error, Result};
use crate::eval::ConfigLabel;
use crate::exec::Execution;
use crate::model::{init_params, CheckpointStage, EncoderConfig, ModelParams};
use crate::qa::MultipleChoiceQuestion;
use crate::taskgen::PairExample;
use crate::train::{config_hash, train_stage, Hyperparams, TrainContext, TrainingCurve};

use super::config::StageSettings;

/// A fine-tuning target: its training pairs and optional dev questions.
#[derive(Debug, Clone)]
pub struct TargetData<'a> {
    pub tag: &'a str,
    pub train: &'a [PairExample],
    pub dev: Option<&'a [MultipleChoiceQuestion]>,
}

/// Everything a recipe trains on.
#[derive(Debug, Clone)]
pub struct RecipeData<'a> {
    pub completion: &'a [PairExample],
    pub cloze: &'a [PairExample],
    /// Dev questions tracked during the completion and cloze stages.
    pub cloze_dev: Option<&'a [MultipleChoiceQuestion]>,
    pub targets: Vec<TargetData<'a>>,
}

/// One trained stage: artifact name, parameters, curve.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub name: String,
    pub params: ModelParams,
    pub curve: TrainingCurve,
}

#[derive(Debug, Clone)]
pub struct RecipeOutput {
    /// The model used before fine-tuning (the random init if no stage ran).
    pub pretrained: ModelParams,
    pub stages: Vec<StageOutput>,
}

impl RecipeOutput {
    /// Fine-tuned parameters for `tag`, if that target was trained.
    pub fn finetuned(&self, tag: &str) -> Option<&ModelParams> {
        let name = finetune_name(tag, self.pretrained.stage());
        self.stages.iter().find(|s| s.name == name).map(|s| &s.params)
    }
}

/// Artifact name of the fine-tuned model for `tag` started from `parent`.
pub fn finetune_name(tag: &str, parent: CheckpointStage) -> String {
    let parent = match parent {
        CheckpointStage::Init => "init".to_string(),
        other => other.to_string().trim_start_matches("theta_").to_string(),
    };
    format!("theta_f-{tag}-from-{parent}")
}

/// Shuffle seeds are offset by the run seed so runs differ in batch order
/// as well as initialization.
pub fn seeded_hyper(h: &Hyperparams, seed: u64) -> Hyperparams {
    Hyperparams {
        shuffle_seed: h.shuffle_seed.wrapping_add(seed),
        ..h.clone()
    }
}

/// Stage callback: given the stage name, the start parameters, a hash of
/// the stage's hyperparameters and examples, and a way to train, return the
/// trained parameters. Lets callers cache checkpoints.
pub trait StageRunner {
    fn run(
        &mut self,
        name: &str,
        start: &ModelParams,
        stage_key: &str,
        train: &mut dyn FnMut() -> Result<(ModelParams, TrainingCurve)>,
    ) -> Result<(ModelParams, TrainingCurve)>;
}

/// Always trains.
pub struct Direct;

impl StageRunner for Direct {
    fn run(
        &mut self,
        _name: &str,
        _start: &ModelParams,
        _stage_key: &str,
        train: &mut dyn FnMut() -> Result<(ModelParams, TrainingCurve)>,
    ) -> Result<(ModelParams, TrainingCurve)> {
        train()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_recipe(
    label: ConfigLabel,
    encoder: &EncoderConfig,
    seed: u64,
    data: &RecipeData<'_>,
    stages: &StageSettings,
    vocab: &Vocabulary,
    exec: Execution,
    runner: &mut dyn StageRunner,
) -> Result<RecipeOutput> {
    if encoder.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "encoder vocab_size {} differs from vocabulary size {}",
            encoder.vocab_size,
            vocab.len()
        )));
    }
    let ctx = |dev| TrainContext {
        vocab,
        max_len: encoder.max_len,
        exec,
        dev,
    };
    let mut current = init_params(encoder, seed)?;
    let mut out = Vec::new();

    if label.knowledge {
        if data.completion.is_empty() {
            return Err(Error::Training(
                "knowledge stage requested but there are no completion examples".into(),
            ));
        }
        let hyper = seeded_hyper(&stages.knowledge, seed);
        let start = current.clone();
        let key = config_hash(&hyper, data.completion);
        let (p, c) = runner.run("theta_k", &start, &key, &mut || {
            train_stage(start.clone(), data.completion, &hyper, ctx(data.cloze_dev))
        })?;
        out.push(StageOutput {
            name: "theta_k".into(),
            params: p.clone(),
            curve: c,
        });
        current = p;
    }
    if label.cloze {
        if data.cloze.is_empty() {
            return Err(Error::Training(
                "cloze stage requested but there are no cloze examples".into(),
            ));
        }
        let name = if label.knowledge { "theta_kq" } else { "theta_q" };
        let hyper = seeded_hyper(&stages.cloze, seed);
        let start = current.clone();
        let key = config_hash(&hyper, data.cloze);
        let (p, c) = runner.run(name, &start, &key, &mut || {
            train_stage(start.clone(), data.cloze, &hyper, ctx(data.cloze_dev))
        })?;
        out.push(StageOutput {
            name: name.into(),
            params: p.clone(),
            curve: c,
        });
        current = p;
    }
    if label.finetune {
        if data.targets.is_empty() {
            return Err(Error::Training(
                "fine-tuning requested but there is no target dataset".into(),
            ));
        }
        let hyper = seeded_hyper(&stages.finetune, seed);
        for t in &data.targets {
            let name = finetune_name(t.tag, current.stage());
            let key = config_hash(&hyper, t.train);
            let (p, c) = runner.run(&name, &current, &key, &mut || {
                train_stage(current.clone(), t.train, &hyper, ctx(t.dev))
            })?;
            out.push(StageOutput {
                name,
                params: p,
                curve: c,
            });
        }
    }
    Ok(RecipeOutput {
        pretrained: current,
        stages: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::build_vocab;
    use crate::eval::ModelSize;
    use crate::model::Preset;
    use crate::qa::Split;
    use crate::synth::SyntheticCorpus;
    use crate::taskgen::{gen_cloze_examples, gen_completion_examples, gen_finetune_examples, TaskGenConfig};

    #[test]
    fn stage_names_follow_the_label() {
        let corpus = SyntheticCorpus::generate(3);
        let kb = corpus.knowledge_base().unwrap();
        let completion = gen_completion_examples(&kb, &TaskGenConfig::default())
            .unwrap()
            .examples;
        let completion = &completion[..16];
        let cloze = gen_cloze_examples(&corpus.questions_in(Split::Train)[..4]).unwrap();
        let ft = gen_finetune_examples(&corpus.target_in(Split::Train)[..4]).unwrap();
        let texts = kb
            .triples
            .iter()
            .map(|t| t.sentence())
            .chain(corpus.questions.iter().map(|q| q.stem.clone()));
        let vocab = build_vocab(
            texts.chain(corpus.target.iter().flat_map(|q| q.candidates.clone())),
            1,
            10_000,
        );
        let enc = Preset::Tiny.config(vocab.len(), 16);
        let mut stages = StageSettings::default();
        for h in [&mut stages.knowledge, &mut stages.cloze, &mut stages.finetune] {
            h.epochs = 1;
            h.batch_size = 8;
        }
        let data = RecipeData {
            completion,
            cloze: &cloze,
            cloze_dev: None,
            targets: vec![TargetData {
                tag: "t",
                train: &ft,
                dev: None,
            }],
        };
        let label = ConfigLabel::new(true, true, true, ModelSize::Tiny);
        let out = run_recipe(
            label,
            &enc,
            0,
            &data,
            &stages,
            &vocab,
            Execution::Sequential,
            &mut Direct,
        )
        .unwrap();
        let names: Vec<&str> = out.stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["theta_k", "theta_kq", "theta_f-t-from-kq"]);
        assert_eq!(out.pretrained.stage(), CheckpointStage::ThetaKQ);
        assert!(out.finetuned("t").is_some());

        let label = ConfigLabel::new(false, true, false, ModelSize::Tiny);
        let out = run_recipe(
            label,
            &enc,
            0,
            &data,
            &stages,
            &vocab,
            Execution::Sequential,
            &mut Direct,
        )
        .unwrap();
        assert_eq!(out.stages[0].name, "theta_q");
        assert_eq!(finetune_name("x", CheckpointStage::Init), "theta_f-x-from-init");
    }
}
