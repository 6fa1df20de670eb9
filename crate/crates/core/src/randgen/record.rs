//! Line-oriented corpus records:
//!
//! ```text
//! d=2 m=2 seed=1234 bounds=-5:5,-5:5 | add x0 sq x1 | sin mul x0 c:0.5
//! ```
//!
//! One instance per line; the header is followed by one prefix expression
//! per objective, separated by `|`.

use crate::error::{Error, Result};
use crate::problem::{Bounds, Objective, Origin, ProblemInstance};

use super::ExprNode;

pub fn write_record(instance: &ProblemInstance) -> Result<String> {
    let seed = match instance.origin {
        Origin::Random { seed } => seed,
        Origin::Benchmark { .. } => {
            return Err(Error::InvalidArgument(
                "only randomly generated instances have a record form".into(),
            ))
        }
    };
    let bounds: Vec<String> = instance
        .bounds
        .lo
        .iter()
        .zip(&instance.bounds.hi)
        .map(|(l, h)| format!("{l:?}:{h:?}"))
        .collect();
    let mut line = format!(
        "d={} m={} seed={} bounds={}",
        instance.d(),
        instance.m(),
        seed,
        bounds.join(",")
    );
    for obj in &instance.objectives {
        match obj {
            Objective::Tree(t) => {
                line.push_str(" | ");
                line.push_str(&t.to_string());
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "benchmark objectives have no record form".into(),
                ))
            }
        }
    }
    Ok(line)
}

pub fn parse_record(line: &str) -> Result<ProblemInstance> {
    let err = |msg: String| Error::Parse { line: 0, msg };
    let mut parts = line.split('|');
    let header = parts.next().unwrap_or_default();
    let (mut d, mut m, mut seed, mut bounds) = (None, None, None, None);
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(format!("malformed header field `{field}`")))?;
        match key {
            "d" => d = Some(value.parse::<usize>().map_err(|_| err(format!("bad d `{value}`")))?),
            "m" => m = Some(value.parse::<usize>().map_err(|_| err(format!("bad m `{value}`")))?),
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|_| err(format!("bad seed `{value}`")))?)
            }
            "bounds" => {
                let mut lo = Vec::new();
                let mut hi = Vec::new();
                for pair in value.split(',') {
                    let (l, h) = pair
                        .split_once(':')
                        .ok_or_else(|| err(format!("bad bound `{pair}`")))?;
                    lo.push(l.parse::<f64>().map_err(|_| err(format!("bad bound `{l}`")))?);
                    hi.push(h.parse::<f64>().map_err(|_| err(format!("bad bound `{h}`")))?);
                }
                bounds = Some(Bounds::new(lo, hi)?);
            }
            _ => return Err(err(format!("unknown header key `{key}`"))),
        }
    }
    let d = d.ok_or_else(|| err("missing d".into()))?;
    let m = m.ok_or_else(|| err("missing m".into()))?;
    let seed = seed.ok_or_else(|| err("missing seed".into()))?;
    let bounds = bounds.unwrap_or_else(|| Bounds::cube(d, -5.0, 5.0));
    if bounds.dim() != d {
        return Err(err(format!("bounds have {} dims, header says d={d}", bounds.dim())));
    }
    let objectives = parts
        .map(|p| {
            let tree: ExprNode = p.trim().parse()?;
            tree.validate(d)?;
            Ok(Objective::Tree(tree))
        })
        .collect::<Result<Vec<_>>>()?;
    if objectives.len() != m {
        return Err(err(format!("header says m={m}, found {} objectives", objectives.len())));
    }
    Ok(ProblemInstance {
        objectives,
        bounds,
        origin: Origin::Random { seed },
    })
}

pub fn write_corpus(instances: &[ProblemInstance]) -> Result<String> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&write_record(inst)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a newline-delimited corpus; blank lines and `#` comments are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<ProblemInstance>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            parse_record(l).map_err(|e| match e {
                Error::Parse { msg, .. } => Error::Parse { line: i + 1, msg },
                other => Error::Parse {
                    line: i + 1,
                    msg: other.to_string(),
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randgen::{generate_instance, GeneratorConfig};
    use crate::util::rng_from;

    #[test]
    fn record_round_trip_is_byte_identical() {
        let cfg = GeneratorConfig::new(3, 0);
        let inst = generate_instance(3, 3, &cfg, &mut rng_from(42, &[])).unwrap();
        let line = write_record(&inst).unwrap();
        let back = parse_record(&line).unwrap();
        assert_eq!(back, inst);
        assert_eq!(write_record(&back).unwrap(), line);
        let again = generate_instance(3, 3, &cfg, &mut rng_from(42, &[])).unwrap();
        assert_eq!(write_record(&again).unwrap(), line);
    }

    #[test]
    fn corpus_errors_carry_line_numbers() {
        let text = "d=1 m=1 seed=1 bounds=-5.0:5.0 | x0\n\nd=1 m=2 seed=2 | x0\n";
        match parse_corpus(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn variable_out_of_range_rejected() {
        assert!(parse_record("d=1 m=1 seed=0 | x3").is_err());
    }
}
