use std::fmt::Write as _;
use std::path::Path;

use crate::alloc::{frac, PlanSource, QuotaRule};
use crate::error::{Error, Result};
use crate::packer::CachePolicy;

/// Upper bound on `frames × tokens_per_frame` for one simulation.
pub const MAX_TOTAL_TOKENS: usize = 1 << 16;

/// The only generator the simulator knows: ChaCha with 8 rounds, one stream
/// per (frame, step, purpose).
pub const RNG_CHACHA8: &str = "chacha8";

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub num_latent_frames: usize,
    /// `N`, which is also the history budget `B_one`.
    pub tokens_per_frame: usize,
    /// Latent grid width; 0 picks `ceil(sqrt(N))`.
    pub grid_width: usize,
    pub prompt_tokens: usize,
    pub cond_tokens: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub steps_per_frame: usize,
    pub keep_prob: f64,
    pub seed: u64,
    pub decay_injection: f64,
    /// History window `W` for PackCache; ignored by the other policies.
    pub window: usize,
    pub policy: CachePolicy,
    pub rng: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_latent_frames: 8,
            tokens_per_frame: 16,
            grid_width: 0,
            prompt_tokens: 8,
            cond_tokens: 16,
            heads: 2,
            head_dim: 16,
            steps_per_frame: 8,
            keep_prob: 0.5,
            seed: 0,
            decay_injection: 8.0,
            window: 4,
            policy: CachePolicy::pack_cache(),
            rng: RNG_CHACHA8.to_string(),
        }
    }
}

impl SimConfig {
    pub fn grid_w(&self) -> usize {
        if self.grid_width > 0 {
            self.grid_width
        } else {
            (self.tokens_per_frame as f64).sqrt().ceil().max(1.0) as usize
        }
    }

    pub fn anchors(&self) -> usize {
        self.prompt_tokens + self.cond_tokens
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.num_latent_frames),
            ("tokens_per_frame", self.tokens_per_frame),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("steps_per_frame", self.steps_per_frame),
            ("window", self.window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep_prob must lie in (0,1], got {}",
                self.keep_prob
            )));
        }
        if !(self.decay_injection >= 0.0 && self.decay_injection.is_finite()) {
            return Err(Error::InvalidArgument("decay_injection must be >= 0".into()));
        }
        if self.rng != RNG_CHACHA8 {
            return Err(Error::InvalidArgument(format!("unsupported rng `{}`", self.rng)));
        }
        let total = self.num_latent_frames.saturating_mul(self.tokens_per_frame);
        if total > MAX_TOTAL_TOKENS || self.anchors() > MAX_TOTAL_TOKENS {
            return Err(Error::InvalidArgument(format!(
                "simulation of {total} frame tokens exceeds the cap of {MAX_TOTAL_TOKENS}"
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::ConfigNotFound(path.display().to_string()),
            _ => Error::Io(e.to_string()),
        })?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Config {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its config-file spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse `{v}`")))
        }
        match key {
            "frames" => self.num_latent_frames = num(key, value)?,
            "tokens_per_frame" => self.tokens_per_frame = num(key, value)?,
            "grid_width" => self.grid_width = num(key, value)?,
            "prompt_tokens" => self.prompt_tokens = num(key, value)?,
            "cond_tokens" => self.cond_tokens = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "head_dim" => self.head_dim = num(key, value)?,
            "steps_per_frame" => self.steps_per_frame = num(key, value)?,
            "keep_prob" => self.keep_prob = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "decay_injection" => self.decay_injection = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "policy" => self.policy.kind = value.parse()?,
            "plan" => self.policy.plan_source = parse_plan(value)?,
            "quota" => self.policy.quota = parse_quota(value)?,
            "rebase" => self.policy.rebase = value.parse()?,
            "attn_mass" => self.policy.mass_mode = value.parse()?,
            "rng" => self.rng = value.to_string(),
            other => return Err(Error::InvalidArgument(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Serializes to the same `key = value` format that [`SimConfig::parse`] reads.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames = {}", self.num_latent_frames);
        let _ = writeln!(s, "tokens_per_frame = {}", self.tokens_per_frame);
        let _ = writeln!(s, "grid_width = {}", self.grid_width);
        let _ = writeln!(s, "prompt_tokens = {}", self.prompt_tokens);
        let _ = writeln!(s, "cond_tokens = {}", self.cond_tokens);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "head_dim = {}", self.head_dim);
        let _ = writeln!(s, "steps_per_frame = {}", self.steps_per_frame);
        let _ = writeln!(s, "keep_prob = {}", self.keep_prob);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "decay_injection = {}", self.decay_injection);
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "policy = {}", self.policy.kind);
        let _ = writeln!(s, "plan = {}", self.policy.plan_source);
        let _ = writeln!(s, "quota = {}", self.policy.quota);
        let _ = writeln!(s, "rebase = {}", self.policy.rebase);
        let _ = writeln!(s, "attn_mass = {}", self.policy.mass_mode);
        let _ = writeln!(s, "rng = {}", self.rng);
        s
    }
}

/// `closed_form` or `rho:<value>`.
pub fn parse_plan(s: &str) -> Result<PlanSource> {
    match s {
        "closed_form" => Ok(PlanSource::ClosedForm),
        _ => {
            let rho = s
                .strip_prefix("rho:")
                .and_then(|r| r.parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown plan `{s}`")))?;
            crate::alloc::DecayParams::new(rho)?;
            Ok(PlanSource::Decay(rho))
        }
    }
}

/// `none`, `strict:<p>/<q>` or `frame:<k>`.
pub fn parse_quota(s: &str) -> Result<QuotaRule> {
    let bad = || Error::InvalidArgument(format!("unknown quota `{s}`"));
    if s == "none" {
        return Ok(QuotaRule::None);
    }
    if let Some(k) = s.strip_prefix("frame:") {
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        return Ok(QuotaRule::FrameEquivalent(k));
    }
    if let Some(r) = s.strip_prefix("strict:") {
        let (n, d) = r.split_once('/').unwrap_or((r, "1"));
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d <= 0 || n < 0 || n > d {
            return Err(Error::InvalidArgument(format!("b_min must lie in [0,1], got {r}")));
        }
        return Ok(QuotaRule::Strict(frac(n, d)));
    }
    Err(bad())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packer::PolicyKind;
    use crate::rope::RebaseMode;

    #[test]
    fn parse_overrides_defaults() {
        let cfg = SimConfig::parse(
            "# toy run\nframes = 12\npolicy = full  # baseline\nquota = strict:3/16\nrebase=none\n",
        )
        .unwrap();
        assert_eq!(cfg.num_latent_frames, 12);
        assert_eq!(cfg.policy.kind, PolicyKind::Full);
        assert_eq!(cfg.policy.quota, QuotaRule::Strict(frac(3, 16)));
        assert_eq!(cfg.policy.rebase, RebaseMode::None);
        assert_eq!(cfg.tokens_per_frame, 16);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = SimConfig::default();
        cfg.policy.quota = QuotaRule::FrameEquivalent(3);
        cfg.policy.plan_source = PlanSource::Decay(0.25);
        cfg.keep_prob = 0.75;
        assert_eq!(SimConfig::parse(&cfg.to_config_text()).unwrap(), cfg);
    }

    #[test]
    fn parse_errors_name_line() {
        let err = SimConfig::parse("frames = 3\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        assert!(SimConfig::parse("frames\n").is_err());
        assert!(SimConfig::parse("keep_prob = 0\n").is_err());
        assert!(SimConfig::parse("rng = pcg64\n").is_err());
        assert!(SimConfig::parse("frames = 100000\n").is_err());
    }

    #[test]
    fn missing_file() {
        let err = SimConfig::load(Path::new("/nonexistent/missing.cfg")).unwrap_err();
        assert!(err.to_string().contains("config not found"));
    }

    #[test]
    fn grid_width_default() {
        let cfg = SimConfig {
            tokens_per_frame: 32,
            ..SimConfig::default()
        };
        assert_eq!(cfg.grid_w(), 6);
    }

    #[test]
    fn quota_and_plan_spellings() {
        assert_eq!(parse_quota("frame:3").unwrap(), QuotaRule::FrameEquivalent(3));
        assert!(parse_quota("strict:5/4").is_err());
        assert!(parse_quota("frame:0").is_err());
        assert_eq!(parse_plan("rho:0.5").unwrap(), PlanSource::Decay(0.5));
        assert!(parse_plan("rho:2").is_err());
    }
}
