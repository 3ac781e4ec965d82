use std::fmt::Write;

use super::inference::TestResult;
use super::reml::MlmFit;

/// Comma-delimited dump of one fit for cross-checking against external
/// mixed-model software. Sections start with a `[name]` line.
pub fn diagnostic_report(fit: &MlmFit, tests: &[TestResult]) -> String {
    let mut out = String::new();
    // writing to a String cannot fail
    let _ = write_report(&mut out, fit, tests);
    out
}

fn write_report(out: &mut String, fit: &MlmFit, tests: &[TestResult]) -> std::fmt::Result {
    writeln!(out, "[fit]")?;
    writeln!(out, "structure,{}", fit.structure)?;
    writeln!(out, "n,{}", fit.n)?;
    writeln!(out, "m,{}", fit.m)?;
    writeln!(out, "converged,{}", fit.converged)?;
    writeln!(out, "iterations,{}", fit.iterations)?;
    writeln!(out, "reml_loglik,{:.16e}", fit.reml_loglik)?;

    writeln!(out, "[beta]")?;
    writeln!(out, "occasion,estimate")?;
    for (t, b) in fit.beta.iter().enumerate() {
        writeln!(out, "{},{:.16e}", t + 1, b)?;
    }

    writeln!(out, "[theta]")?;
    writeln!(out, "index,estimate")?;
    for (k, v) in fit.theta.iter().enumerate() {
        writeln!(out, "{},{:.16e}", k + 1, v)?;
    }

    write_matrix(out, "sigma", fit.sigma.as_matrix())?;
    write_matrix(out, "information", fit.info.as_matrix())?;

    writeln!(out, "[tests]")?;
    writeln!(out, "method,f,df1,ddf,scale,p,fallback")?;
    for t in tests {
        writeln!(
            out,
            "{},{:.16e},{},{:.16e},{:.16e},{:.16e},{}",
            t.method, t.f, t.df1, t.ddf, t.scale, t.p, t.fallback
        )?;
    }
    Ok(())
}

fn write_matrix(out: &mut String, name: &str, m: &nalgebra::DMatrix<f64>) -> std::fmt::Result {
    writeln!(out, "[{name}]")?;
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{draw_sample, make_spec, Sphericity};
    use crate::mlm::{occasion_contrast, reml_fit, wald_f, CovStructure, DdfMethod};
    use crate::numerics::derive_stream;

    #[test]
    fn report_has_every_section() {
        let spec = make_spec(3, Sphericity::Holds).unwrap();
        let s = draw_sample(&spec, 8, &mut derive_stream(1, 2, 3)).unwrap();
        let fit = reml_fit(&s, CovStructure::Unstructured).unwrap();
        let l = occasion_contrast(3);
        let tests: Vec<_> = [DdfMethod::Residual, DdfMethod::KenwardRoger]
            .into_iter()
            .map(|m| wald_f(&fit, &l, m).unwrap())
            .collect();
        let text = diagnostic_report(&fit, &tests);
        for section in ["[fit]", "[beta]", "[theta]", "[sigma]", "[information]", "[tests]"] {
            assert!(text.contains(section), "missing {section}");
        }
        assert!(text.contains("structure,UN"));
        assert!(text.lines().any(|l| l.starts_with("kenward-roger,")));
        // 6 theta rows for m = 3
        let theta_rows = text
            .split("[theta]")
            .nth(1)
            .unwrap()
            .lines()
            .skip(2)
            .take_while(|l| !l.starts_with('['))
            .count();
        assert_eq!(theta_rows, 6);
    }
}
