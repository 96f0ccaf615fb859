//! Flag sets that override config-file values. Every flag is optional and
//! wins over the file when given.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use docline_core::{FinetuneConfig, GenParams, GridConfig, ObjectiveFlags, TrainConfig};

#[derive(Args, Debug)]
pub struct GenFlags {
    /// TOML file with generator parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub lines: Option<Vec<usize>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub words_per_line: Option<Vec<usize>>,
    #[arg(long)]
    pub glyph_size: Option<usize>,
    #[arg(long)]
    pub ink_level: Option<f64>,
    #[arg(long)]
    pub background_level: Option<f64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Tag the words of each first textline with this entity type.
    #[arg(long)]
    pub first_line_tag: Option<String>,
}

impl GenFlags {
    pub fn apply(&self, p: &mut GenParams) {
        set(&mut p.seed, self.seed);
        set(&mut p.lines_range, pair(&self.lines));
        set(&mut p.words_per_line_range, pair(&self.words_per_line));
        set(&mut p.glyph_size_px, self.glyph_size);
        set(&mut p.ink_level, self.ink_level);
        set(&mut p.background_level, self.background_level);
        set(&mut p.vocab_size, self.vocab_size);
        if self.first_line_tag.is_some() {
            p.first_line_tag.clone_from(&self.first_line_tag);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Objective {
    Mlm,
    Trc,
    Mrm,
    Tgm,
}

#[derive(Args, Debug)]
pub struct TrainFlags {
    /// TOML file with a training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    /// Total optimizer steps.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub text_layers: Option<usize>,
    #[arg(long)]
    pub fusion_layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    /// Zero takes the size from the corpus vocabulary.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long, num_args = 4, value_names = ["C1", "C2", "C3", "C4"])]
    pub conv_channels: Option<Vec<usize>>,
    #[arg(long, num_args = 2, value_names = ["ROWS", "COLS"])]
    pub grid: Option<Vec<usize>>,
    #[arg(long)]
    pub max_lines: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub bias_buckets: Option<usize>,
    /// Enabled objectives, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub objectives: Option<Vec<Objective>>,
    #[arg(long)]
    pub lambda_trc: Option<f64>,
    #[arg(long)]
    pub lambda_mrm: Option<f64>,
    #[arg(long)]
    pub lambda_tgm: Option<f64>,
    #[arg(long)]
    pub mlm_rate: Option<f64>,
    #[arg(long)]
    pub mrm_rate: Option<f64>,
    #[arg(long)]
    pub tgm_rate: Option<f64>,
    #[arg(long)]
    pub mrm_background_rate: Option<f64>,
    #[arg(long)]
    pub normalize_features: Option<bool>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

impl TrainFlags {
    pub fn apply(&self, c: &mut TrainConfig) {
        if let Some(p) = &self.corpus {
            c.corpus.clone_from(p);
        }
        if let Some(p) = &self.out_dir {
            c.out_dir.clone_from(p);
        }
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.seed, self.seed);
        set(&mut c.checkpoint_interval, self.checkpoint_interval);
        let s = &mut c.schedule;
        set(&mut s.total_steps, self.steps);
        set(&mut s.peak_lr, self.peak_lr);
        set(&mut s.warmup_fraction, self.warmup_fraction);
        set(&mut s.weight_decay, self.weight_decay);
        let m = &mut c.model;
        set(&mut m.hidden_dim, self.hidden_dim);
        set(&mut m.text_layers, self.text_layers);
        set(&mut m.fusion_layers, self.fusion_layers);
        set(&mut m.heads, self.heads);
        set(&mut m.ffn_dim, self.ffn_dim);
        set(&mut m.vocab_size, self.vocab_size);
        if let Some(v) = &self.conv_channels {
            m.conv_channels = [v[0], v[1], v[2], v[3]];
        }
        set(&mut m.grid, pair(&self.grid).map(|[rows, cols]| GridConfig { rows, cols }));
        set(&mut m.max_lines, self.max_lines);
        set(&mut m.max_tokens, self.max_tokens);
        set(&mut m.bias_buckets, self.bias_buckets);
        let o = &mut c.objectives;
        if let Some(list) = &self.objectives {
            o.enabled = ObjectiveFlags {
                mlm: list.contains(&Objective::Mlm),
                trc: list.contains(&Objective::Trc),
                mrm: list.contains(&Objective::Mrm),
                tgm: list.contains(&Objective::Tgm),
            };
        }
        set(&mut o.lambdas.trc, self.lambda_trc);
        set(&mut o.lambdas.mrm, self.lambda_mrm);
        set(&mut o.lambdas.tgm, self.lambda_tgm);
        set(&mut o.rates.mlm, self.mlm_rate);
        set(&mut o.rates.mrm, self.mrm_rate);
        set(&mut o.rates.tgm, self.tgm_rate);
        set(&mut o.rates.mrm_background, self.mrm_background_rate);
        set(&mut o.normalize_features, self.normalize_features);
        set(&mut o.temperature, self.temperature);
    }
}

#[derive(Args, Debug)]
pub struct FinetuneFlags {
    /// TOML file with fine-tuning settings.
    #[arg(long = "finetune-config")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl FinetuneFlags {
    pub fn apply(&self, c: &mut FinetuneConfig) {
        set(&mut c.epochs, self.epochs);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.peak_lr, self.peak_lr);
        set(&mut c.warmup_fraction, self.warmup_fraction);
        set(&mut c.weight_decay, self.weight_decay);
        set(&mut c.seed, self.seed);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn pair(v: &Option<Vec<usize>>) -> Option<[usize; 2]> {
    v.as_ref().map(|v| [v[0], v[1]])
}
