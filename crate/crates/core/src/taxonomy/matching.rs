use std::collections::HashMap;

use super::Taxonomy;

const DELIMITERS: &[char] = &[',', ';', '/', '&', '+', '|', '\n'];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaterialMatch {
    /// Matched node ids, in order of first appearance.
    pub nodes: Vec<String>,
    /// Normalized tokens that matched nothing.
    pub unmatched: Vec<String>,
}

/// Lower-cases, splits on list delimiters (and the word "and"), and strips
/// digits, percent signs and punctuation from every token.
pub fn normalize_material_string(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .split(DELIMITERS)
        .flat_map(|part| {
            let words: Vec<&str> = part.split_whitespace().collect();
            words
                .split(|w| *w == "and")
                .map(|ws| ws.join(" "))
                .collect::<Vec<_>>()
        })
        .map(|tok| normalize_token(&tok))
        .filter(|t| !t.is_empty())
        .collect()
}

fn normalize_token(tok: &str) -> String {
    let cleaned: String = tok
        .chars()
        .map(|c| if c.is_alphabetic() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Matches a seller-entered materials string against node ids, display names
/// and aliases. Tokens that match nothing are reported, never guessed.
pub fn match_material_string(raw: &str, taxonomy: &Taxonomy) -> MaterialMatch {
    let lookup = lookup_table(taxonomy);
    let mut out = MaterialMatch::default();
    for tok in normalize_material_string(raw) {
        match lookup.get(tok.as_str()) {
            Some(&idx) => {
                let id = taxonomy.id(idx).to_string();
                if !out.nodes.contains(&id) {
                    out.nodes.push(id);
                }
            }
            None => out.unmatched.push(tok),
        }
    }
    out
}

fn lookup_table(taxonomy: &Taxonomy) -> HashMap<String, usize> {
    let mut table = HashMap::new();
    // Names and ids win over aliases when both normalize to the same key.
    for (i, node) in taxonomy.nodes().iter().enumerate() {
        for alias in &node.aliases {
            table.entry(normalize_token(alias)).or_insert(i);
        }
    }
    for (i, node) in taxonomy.nodes().iter().enumerate() {
        table.insert(normalize_token(&node.id.to_lowercase()), i);
        table.insert(normalize_token(&node.display_name.to_lowercase()), i);
    }
    table.remove("");
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> Taxonomy {
        Taxonomy::parse(
            "material\t\tMaterial\n\
             plastic\tmaterial\tPlastic\n\
             thermoplastic\tplastic\tThermoplastic\n\
             acrylic\tthermoplastic\tAcrylic\tplexiglass,pmma\n\
             fabric\tmaterial\tFabric\n\
             cotton\tfabric\tCotton\n\
             steel\tmaterial\tSteel\tstainless steel\n",
        )
        .unwrap()
    }

    #[test]
    fn exact_name_matches() {
        assert_eq!(match_material_string("Acrylic", &tax()).nodes, vec!["acrylic"]);
    }

    #[test]
    fn unknown_material_reported() {
        let m = match_material_string("unobtainium", &tax());
        assert!(m.nodes.is_empty());
        assert_eq!(m.unmatched, vec!["unobtainium"]);
    }

    #[test]
    fn percentages_stripped() {
        assert_eq!(normalize_material_string("100% Cotton"), vec!["cotton"]);
        assert_eq!(match_material_string("100% Cotton", &tax()).nodes, vec!["cotton"]);
    }

    #[test]
    fn delimiters_and_aliases() {
        let m = match_material_string("60% cotton / 40% PMMA, Stainless-Steel and wood", &tax());
        assert_eq!(m.nodes, vec!["cotton", "acrylic", "steel"]);
        assert_eq!(m.unmatched, vec!["wood"]);
    }
}
