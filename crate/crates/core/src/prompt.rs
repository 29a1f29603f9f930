//! Prompt templates for schema summaries, paradigm annotation and online
//! inference. The texts live in `prompts/` so they can be diffed and
//! versioned on their own.

pub const STAGE1_SCHEMA: &str = include_str!("../prompts/stage1_schema.txt");
pub const STAGE2_PARADIGM: &str = include_str!("../prompts/stage2_paradigm.txt");
pub const STAGE3_INFERENCE: &str = include_str!("../prompts/stage3_inference.txt");
pub const SPIKE_RULE: &str = include_str!("../prompts/spike_rule.txt");
pub const PARADIGM_BLOCK: &str = include_str!("../prompts/paradigm_block.txt");

/// Bumped whenever a template text changes.
pub const TEMPLATE_VERSION: u32 = 1;

/// Substitutes `{name}` placeholders in one pass. Unknown braces (such as
/// the JSON examples in the templates) and braces inside substituted values
/// are left alone.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
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
