/// `mean(se)` with the standard error rounded to one significant digit and
/// the mean rounded to the same decimal place, e.g. `0.246(2)`. Values below
/// 0.01 or at least 10⁴ in magnitude use a power-of-ten suffix: `8.2(1)e-3`.
pub fn format_mean_se(mean: f64, se: f64) -> String {
    if !mean.is_finite() || !se.is_finite() || se < 0.0 {
        return format!("{mean}({se})");
    }
    let mag = mean.abs();
    if mag != 0.0 && !(0.01..1e4).contains(&mag) {
        let e = mag.log10().floor() as i32;
        let s = 10f64.powi(e);
        return format!("{}e{e}", format_mean_se(mean / s, se / s));
    }
    if se == 0.0 {
        return format!("{}(0)", trim(format!("{mean:.6}")));
    }
    let mut p = se.log10().floor() as i32;
    let mut digit = (se / 10f64.powi(p)).round() as i64;
    if digit >= 10 {
        digit = 1;
        p += 1;
    }
    if p < 0 {
        let decimals = (-p) as usize;
        format!("{mean:.decimals$}({digit})")
    } else {
        let unit = 10f64.powi(p);
        let m = (mean / unit).round() * unit;
        format!("{m:.0}({})", digit * unit as i64)
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
