//! Learned motion patterns as CSV rows or as arrows in an SVG plot.

use std::fmt::Write;

use pec_core::model::{EncoderKind, PatternSet};

use crate::error::{CliError, Result};

pub fn parse_which(s: &str) -> Result<EncoderKind> {
    match s {
        "context" => Ok(EncoderKind::Context),
        "target" => Ok(EncoderKind::Target),
        other => Err(CliError::Config(format!(
            "unknown encoder {other:?} (expected context or target)"
        ))),
    }
}

/// `j,lambda,b,x1,y1,...,xL,yL` with a header row.
pub fn patterns_csv(set: &PatternSet) -> String {
    let len = set.pattern_len();
    let mut out = String::from("j,lambda,b");
    for k in 1..=len {
        let _ = write!(out, ",x{k},y{k}");
    }
    out.push('\n');
    for j in 0..set.num_patterns() {
        let _ = write!(out, "{j},{},{}", set.lambda.data()[j], set.bias.data()[j]);
        for s in set.pattern(j) {
            let _ = write!(out, ",{},{}", s.x, s.y);
        }
        out.push('\n');
    }
    out
}

const SVG_SIZE: f64 = 600.0;

/// One arrow per pattern from its first to its last state, in the
/// egocentric plane `[-extent, extent]^2` with `+y` pointing up and the
/// target drawn at the origin.
pub fn patterns_svg(set: &PatternSet, extent: f64) -> Result<String> {
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(CliError::Config(format!("axis extent {extent} must be positive")));
    }
    let scale = SVG_SIZE / (2.0 * extent);
    let px = |x: f64| (x + extent) * scale;
    let py = |y: f64| (extent - y) * scale;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    );
    out.push_str(
        "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"10\" refY=\"5\" markerWidth=\"6\" markerHeight=\"6\" orient=\"auto\"><path d=\"M0,0 L10,5 L0,10 z\"/></marker></defs>\n",
    );
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r##"<line class="axis" x1="0" y1="{0}" x2="{SVG_SIZE}" y2="{0}" stroke="#bbb"/>"##,
        py(0.0)
    );
    let _ = writeln!(
        out,
        r##"<line class="axis" x1="{0}" y1="0" x2="{0}" y2="{SVG_SIZE}" stroke="#bbb"/>"##,
        px(0.0)
    );
    for j in 0..set.num_patterns() {
        let states = set.pattern(j);
        let (a, b) = (states[0], states[states.len() - 1]);
        let _ = writeln!(
            out,
            r#"<line class="pattern" data-j="{j}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="steelblue" marker-end="url(#arrow)"/>"#,
            px(a.x),
            py(a.y),
            px(b.x),
            py(b.y)
        );
    }
    let _ = writeln!(
        out,
        r#"<circle class="target" cx="{}" cy="{}" r="5" fill="green"/>"#,
        px(0.0),
        py(0.0)
    );
    out.push_str("</svg>\n");
    Ok(out)
}
