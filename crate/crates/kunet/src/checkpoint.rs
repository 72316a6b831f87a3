//! Textual model container: plan, variant, overrides, and every named
//! parameter tensor with its shape.
//!
//! Values are written with Rust's shortest-roundtrip float formatting, so a
//! write/read cycle is bit-exact at 64-bit.

use std::fmt::Write as _;
use std::path::Path;

use kunet_core::kernels::KernelKind;
use kunet_core::params::ParamStore;
use kunet_core::partition::PartitionPlan;
use kunet_core::unet::{build, KUNetModel, KernelOverrides, OutputSchedule, Variant};

use crate::error::{io_err, Error, Result};

const MAGIC: &str = "kunet-checkpoint v1";

fn fmt_list(xs: &[usize]) -> String {
    if xs.is_empty() {
        "-".to_string()
    } else {
        xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad list entry {p:?}"))))
        .collect()
}

fn fmt_opt(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "-".to_string())
}

fn parse_opt(s: &str) -> Result<Option<usize>> {
    if s == "-" {
        Ok(None)
    } else {
        s.parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Checkpoint(format!("bad optional value {s:?}")))
    }
}

fn fmt_kinds(kinds: &Option<Vec<KernelKind>>) -> String {
    match kinds {
        None => "-".to_string(),
        Some(ks) => ks.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(","),
    }
}

fn parse_kinds(s: &str) -> Result<Option<Vec<KernelKind>>> {
    if s == "-" {
        return Ok(None);
    }
    let ks = s
        .split(',')
        .map(|p| KernelKind::parse(p.trim()).map_err(Error::Core))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(ks))
}

/// Serialize a model and its registry.
pub fn render(model: &KUNetModel, store: &ParamStore) -> String {
    let p = &model.plan;
    let o = &model.out;
    let ov = &model.overrides;
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "variant {}", model.variant.as_str());
    let _ = writeln!(s, "lookback {}", p.lookback);
    let _ = writeln!(s, "features {}", p.features);
    let _ = writeln!(s, "l_unit {}", p.l_unit);
    let _ = writeln!(s, "l_multiples {}", fmt_list(&p.l_multiples));
    let _ = writeln!(s, "m_unit {}", p.m_unit);
    let _ = writeln!(s, "m_multiples {}", fmt_list(&p.m_multiples));
    let _ = writeln!(s, "hidden {}", p.hidden);
    let _ = writeln!(s, "latent_len {}", p.latent_len);
    let _ = writeln!(s, "latent_width {}", p.latent_width);
    let _ = writeln!(s, "horizon {}", o.horizon);
    let _ = writeln!(s, "out_unit {}", o.unit);
    let _ = writeln!(s, "out_multiples {}", fmt_list(&o.multiples));
    let _ = writeln!(s, "heads {}", ov.heads);
    let _ = writeln!(s, "blocks {}", ov.blocks);
    let _ = writeln!(s, "mlp_hidden {}", fmt_opt(ov.mlp_hidden));
    let _ = writeln!(s, "attn_width {}", fmt_opt(ov.attn_width));
    let _ = writeln!(s, "lstm_state {}", fmt_opt(ov.lstm_state));
    let _ = writeln!(s, "use_skips {}", ov.use_skips);
    let _ = writeln!(s, "encoder_kinds {}", fmt_kinds(&ov.encoder_kinds));
    let _ = writeln!(s, "decoder_kinds {}", fmt_kinds(&ov.decoder_kinds));
    let _ = writeln!(s, "params {}", store.len());
    for (_, param) in store.iter() {
        let _ = write!(s, "param {} {}", param.name, param.shape.len());
        for d in &param.shape {
            let _ = write!(s, " {d}");
        }
        for v in &param.data {
            let _ = write!(s, " {v}");
        }
        let _ = writeln!(s);
    }
    s.push_str("end\n");
    s
}

pub fn save(path: &Path, model: &KUNetModel, store: &ParamStore) -> Result<()> {
    std::fs::write(path, render(model, store)).map_err(io_err(path))
}

/// Rebuild a model and registry from text produced by [`render`].
pub fn parse(text: &str) -> Result<(KUNetModel, ParamStore)> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Checkpoint(format!("missing {MAGIC:?} header")));
    }
    let mut fields = std::collections::BTreeMap::new();
    let mut param_lines = Vec::new();
    let mut seen_params = false;
    for line in lines {
        if line == "end" {
            break;
        }
        let (key, rest) = line
            .split_once(' ')
            .ok_or_else(|| Error::Checkpoint(format!("malformed line {line:?}")))?;
        if key == "param" {
            param_lines.push(rest);
        } else if key == "params" {
            seen_params = true;
            fields.insert(key.to_string(), rest.to_string());
        } else if seen_params {
            return Err(Error::Checkpoint("header fields after params section".into()));
        } else {
            fields.insert(key.to_string(), rest.to_string());
        }
    }
    let get = |k: &str| -> Result<&String> {
        fields.get(k).ok_or_else(|| Error::Checkpoint(format!("missing field {k:?}")))
    };
    let usize_of = |k: &str| -> Result<usize> {
        get(k)?.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad value for {k:?}")))
    };

    let plan = PartitionPlan {
        lookback: usize_of("lookback")?,
        features: usize_of("features")?,
        l_unit: usize_of("l_unit")?,
        l_multiples: parse_list(get("l_multiples")?)?,
        m_unit: usize_of("m_unit")?,
        m_multiples: parse_list(get("m_multiples")?)?,
        hidden: usize_of("hidden")?,
        latent_len: usize_of("latent_len")?,
        latent_width: usize_of("latent_width")?,
    };
    let out = OutputSchedule::new(usize_of("horizon")?, usize_of("out_unit")?, parse_list(get("out_multiples")?)?);
    let variant = Variant::parse(get("variant")?).map_err(Error::Core)?;
    let overrides = KernelOverrides {
        mlp_hidden: parse_opt(get("mlp_hidden")?)?,
        attn_width: parse_opt(get("attn_width")?)?,
        heads: usize_of("heads")?,
        blocks: usize_of("blocks")?,
        lstm_state: parse_opt(get("lstm_state")?)?,
        use_skips: get("use_skips")? == "true",
        encoder_kinds: parse_kinds(get("encoder_kinds")?)?,
        decoder_kinds: parse_kinds(get("decoder_kinds")?)?,
    };

    let (model, mut store) = build(&plan, &out, variant, &overrides, 0).map_err(Error::Core)?;
    let declared = usize_of("params")?;
    if param_lines.len() != declared || declared != store.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: declared {declared}, found {} lines, model has {}",
            param_lines.len(),
            store.len()
        )));
    }
    for line in param_lines {
        let mut tok = line.split_whitespace();
        let name = tok.next().ok_or_else(|| Error::Checkpoint("empty param line".into()))?;
        let rank: usize = tok
            .next()
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("param {name}: bad rank")))?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d: usize = tok
                .next()
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("param {name}: truncated shape")))?;
            shape.push(d);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let v: f64 = tok
                .next()
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("param {name}: truncated values")))?;
            data.push(v);
        }
        if tok.next().is_some() {
            return Err(Error::Checkpoint(format!("param {name}: trailing values")));
        }
        let (pid, existing) = store
            .by_name(name)
            .ok_or_else(|| Error::Checkpoint(format!("param {name} not in the rebuilt model")))?;
        if existing.shape != shape {
            return Err(Error::Checkpoint(format!(
                "param {name}: shape {shape:?} does not match model shape {:?}",
                existing.shape
            )));
        }
        store.get_mut(pid).data = data;
    }
    Ok((model, store))
}

pub fn load(path: &Path) -> Result<(KUNetModel, ParamStore)> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let plan = PartitionPlan::channel_independent(8, 2, vec![2, 2], 4);
        let out = OutputSchedule::new(6, 3, vec![2]);
        let (model, store) =
            build(&plan, &out, Variant::Transformer, &KernelOverrides::default(), 31).unwrap();
        let text = render(&model, &store);
        let (model2, store2) = parse(&text).unwrap();
        assert_eq!(model2.variant, model.variant);
        assert_eq!(model2.plan, model.plan);
        assert_eq!(model2.out, model.out);
        for ((_, a), (_, b)) in store.iter().zip(store2.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.data, b.data, "param {} drifted", a.name);
        }
        // And the re-rendered text is identical.
        assert_eq!(render(&model2, &store2), text);
    }

    #[test]
    fn round_trip_preserves_extreme_values() {
        let plan = PartitionPlan::channel_independent(4, 2, vec![2], 2);
        let (model, mut store) = build(
            &plan,
            &OutputSchedule::mirror(&plan),
            Variant::Linear,
            &KernelOverrides::default(),
            1,
        )
        .unwrap();
        let (pid, _) = store.by_name("enc0.w").unwrap();
        store.get_mut(pid).data[0] = 1.0e-300;
        store.get_mut(pid).data[1] = -3.141592653589793e17;
        let (_, store2) = parse(&render(&model, &store)).unwrap();
        let (pid2, p2) = store2.by_name("enc0.w").unwrap();
        let _ = pid2;
        assert_eq!(p2.data[0].to_bits(), 1.0e-300_f64.to_bits());
        assert_eq!(p2.data[1].to_bits(), (-3.141592653589793e17_f64).to_bits());
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        assert!(parse("not a checkpoint").is_err());
        let plan = PartitionPlan::channel_independent(4, 2, vec![2], 2);
        let (model, store) = build(
            &plan,
            &OutputSchedule::mirror(&plan),
            Variant::Linear,
            &KernelOverrides::default(),
            1,
        )
        .unwrap();
        let text = render(&model, &store);
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(parse(&truncated).is_err());
    }
}
