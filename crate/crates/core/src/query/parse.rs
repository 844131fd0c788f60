//! Reply grammar.
//!
//! ```text
//! reply    := section*
//! section  := header (":" inline?)? NEWLINE item*
//! header   := "Main Positive" | "Helping Positive(s)" | "Negative(s)"   (case-insensitive,
//!             optional markdown emphasis, "#" prefix, list marker or "(...)" note)
//! inline   := phrase ("," phrase)*
//! item     := ("-" | "*" | "•" | DIGITS ("." | ")"))? phrase NEWLINE
//! ```
//!
//! Negatives become the canonical phrases. Text before the first header is
//! ignored.

use crate::relevancy::QuerySpec;

use super::QueryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Main,
    Helping,
    Negatives,
}

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim_start();
    for m in ["- ", "* ", "• ", "+ "] {
        if let Some(rest) = t.strip_prefix(m) {
            return rest.trim_start();
        }
    }
    if t == "-" || t == "*" || t == "•" {
        return "";
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    t
}

fn strip_emphasis(s: &str) -> &str {
    s.trim().trim_matches(|c| c == '*' || c == '_' || c == '`').trim()
}

fn clean_phrase(s: &str) -> String {
    let s = strip_emphasis(s);
    let s = s.trim_matches(|c| c == '"' || c == '\'' || c == '“' || c == '”');
    s.trim_end_matches(['.', ',', ';']).trim().to_string()
}

/// Recognizes a section header and returns the text after its colon.
fn header(line: &str) -> Option<(Section, &str)> {
    let t = strip_list_marker(line).trim_start_matches('#').trim_start();
    let t = t.trim_start_matches(['*', '_']);
    let lower = t.to_ascii_lowercase();
    let (section, key_len) = [
        (Section::Main, "main positive"),
        (Section::Helping, "helping positive"),
        (Section::Negatives, "negative"),
    ]
    .into_iter()
    .find_map(|(s, k)| lower.starts_with(k).then_some((s, k.len())))?;

    let mut rest = &t[key_len..];
    rest = rest.strip_prefix(['s', 'S']).unwrap_or(rest);
    rest = rest.trim_start_matches(['*', '_']).trim_start();
    if rest.starts_with('(') {
        let close = rest.find(')')?;
        rest = rest[close + 1..].trim_start();
    }
    rest = rest.trim_start_matches(['*', '_']).trim_start();
    if let Some(after) = rest.strip_prefix(':') {
        Some((section, after.trim_start_matches(['*', '_']).trim()))
    } else if rest.is_empty() {
        Some((section, ""))
    } else {
        None
    }
}

/// Parses a model reply into a validated query.
pub fn parse_response(text: &str) -> Result<QuerySpec, QueryError> {
    let mut main: Option<Vec<String>> = None;
    let mut helping: Option<Vec<String>> = None;
    let mut negatives: Option<Vec<String>> = None;
    let mut current: Option<Section> = None;

    for raw in text.lines() {
        if raw.trim().is_empty() {
            continue;
        }
        if let Some((section, inline)) = header(raw) {
            current = Some(section);
            let slot = match section {
                Section::Main => &mut main,
                Section::Helping => &mut helping,
                Section::Negatives => &mut negatives,
            };
            let list = slot.get_or_insert_with(Vec::new);
            if !inline.is_empty() {
                if section == Section::Main {
                    list.push(clean_phrase(inline));
                } else {
                    list.extend(inline.split(',').map(clean_phrase).filter(|p| !p.is_empty()));
                }
            }
            continue;
        }
        let Some(section) = current else { continue };
        let phrase = clean_phrase(strip_list_marker(raw));
        if phrase.is_empty() {
            continue;
        }
        let slot = match section {
            Section::Main => &mut main,
            Section::Helping => &mut helping,
            Section::Negatives => &mut negatives,
        };
        slot.get_or_insert_with(Vec::new).push(phrase);
    }

    let main = main
        .and_then(|m| m.into_iter().find(|p| !p.is_empty()))
        .ok_or(QueryError::MissingSection("Main Positive"))?;
    let helping = helping.ok_or(QueryError::MissingSection("Helping Positives"))?;
    let canonicals = negatives.ok_or(QueryError::MissingSection("Negatives"))?;
    let q = QuerySpec {
        main_positive: main,
        helping_positives: helping,
        canonicals,
    };
    q.validate()?;
    Ok(q)
}

/// Renders a query in the reply grammar; `parse_response` inverts it.
pub fn render_response(q: &QuerySpec) -> String {
    let mut out = format!("Main Positive: {}\nHelping Positives:\n", q.main_positive);
    for h in &q.helping_positives {
        out.push_str(&format!("- {h}\n"));
    }
    out.push_str("Negatives:\n");
    for n in &q.canonicals {
        out.push_str(&format!("- {n}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_numbered_and_bulleted_lists() {
        let text = "Sure! Here is the structured information.\n\n\
            **Main Positive:** cars\n\
            **Helping Positives (related terms or attributes):**\n\
            1. sedan\n\
            2. vehicle headlights\n\
            ### Negatives\n\
            - trucks\n* buses\n• road surface\n- buildings.\n- sky\n";
        let q = parse_response(text).unwrap();
        assert_eq!(q.main_positive, "cars");
        assert_eq!(q.helping_positives, vec!["sedan", "vehicle headlights"]);
        assert_eq!(q.canonicals, vec!["trucks", "buses", "road surface", "buildings", "sky"]);
    }

    #[test]
    fn inline_lists_and_case() {
        let text = "MAIN POSITIVE: traffic light\nhelping positives: red signal, pole\nNEGATIVES: street lamp, sign, tree, sky";
        let q = parse_response(text).unwrap();
        assert_eq!(q.helping_positives.len(), 2);
        assert_eq!(q.canonicals.len(), 4);
    }

    #[test]
    fn missing_section_is_named() {
        let err = parse_response("Main Positive: cars\nNegatives: a, b, c, d").unwrap_err();
        assert!(matches!(err, QueryError::MissingSection("Helping Positives")), "{err}");
        let err = parse_response("Helping Positives: x\nNegatives: a, b, c, d").unwrap_err();
        assert!(matches!(err, QueryError::MissingSection("Main Positive")));
    }

    #[test]
    fn counts_out_of_range() {
        let zero = "Main Positive: cars\nHelping Positives:\nNegatives: a, b, c, d, e";
        assert!(matches!(
            parse_response(zero).unwrap_err(),
            QueryError::CountOutOfRange { helping: 0, canonicals: 5 }
        ));
        let seven = "Main Positive: cars\nHelping Positives: x\nNegatives: a, b, c, d, e, f, g";
        assert!(matches!(
            parse_response(seven).unwrap_err(),
            QueryError::CountOutOfRange { helping: 1, canonicals: 7 }
        ));
    }

    #[test]
    fn overlap_rejected() {
        let text = "Main Positive: cars\nHelping Positives: sedan\nNegatives: Cars, b, c, d";
        assert!(matches!(parse_response(text).unwrap_err(), QueryError::Overlap(_)));
    }

    #[test]
    fn items_that_look_like_headers_are_items() {
        let text = "Main Positive: tree\nHelping Positives: foliage\nNegatives:\n- negative space blob\n- b\n- c\n- d";
        let q = parse_response(text).unwrap();
        assert_eq!(q.canonicals[0], "negative space blob");
    }

    #[test]
    fn render_round_trip() {
        let q = QuerySpec {
            main_positive: "pedestrians".into(),
            helping_positives: vec!["people walking".into()],
            canonicals: ["cyclists", "poles", "cars", "sidewalk", "sky"].map(String::from).to_vec(),
        };
        assert_eq!(parse_response(&render_response(&q)).unwrap(), q);
    }
}
