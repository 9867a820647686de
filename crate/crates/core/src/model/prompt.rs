use crate::error::{Error, Result};

pub const SYSTEM_PROMPT: &str = "A chat between a curious human and an artificial intelligence assistant. \
The assistant gives helpful, detailed, and polite answers to the human's questions.";

/// `{class}` and `{modality}` are substituted; `<image>` marks where the vision tokens go.
pub const USER_TEMPLATE: &str = "<image> USER: Can you segment the {class} in this {modality} image? ASSISTANT:";

pub const ASSISTANT_TEMPLATE: &str =
    "This is a <p> {modality} </p> image. The image contains <p> {class} </p> [SEG].";

/// Returns `(user_text, target_text)` for one category of one image.
pub fn render_prompt(class_name: &str, modality: &str) -> Result<(String, String)> {
    let class_name = class_name.trim();
    let modality = modality.trim();
    if class_name.is_empty() || modality.is_empty() {
        return Err(Error::InvalidArgument(
            "class name and modality must be non-empty".into(),
        ));
    }
    let fill = |t: &str| t.replace("{class}", class_name).replace("{modality}", modality);
    Ok((
        format!("{SYSTEM_PROMPT} {}", fill(USER_TEMPLATE)),
        fill(ASSISTANT_TEMPLATE),
    ))
}
