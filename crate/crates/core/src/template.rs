//! Single-pass `{name}` placeholder substitution.

/// Replaces each `{name}` whose name appears in `values`. Substituted text is
/// never rescanned, so values may themselves contain braces. Unknown
/// placeholders are left untouched.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out =
        String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replacement = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (*v, close))
        });
        match replacement {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::fill;

    #[test]
    fn substitutes_known_names_once() {
        assert_eq!(
            fill("a {x} b {y}", &[("x", "1"), ("y", "{x}")]),
            "a 1 b {x}"
        );
    }

    #[test]
    fn leaves_unknown_placeholders() {
        assert_eq!(fill("{z} and {", &[("x", "1")]), "{z} and {");
    }

    #[test]
    fn repeated_placeholder() {
        assert_eq!(fill("{l}/{l}", &[("l", "ALPG")]), "ALPG/ALPG");
    }
}
