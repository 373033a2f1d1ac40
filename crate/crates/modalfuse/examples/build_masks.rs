//! Prints the token layouts and block attention masks for all three
//! fusion modes on a small three-modality schema.

use modalfuse::masking::{
    build_token_layout, channel_availability, embedding_channels, MaskCache, PresenceBitmap,
};
use modalfuse::schema::{FusionMode, ModalityDecl, ModalitySchema};

fn main() -> modalfuse::Result<()> {
    let schema = ModalitySchema::new(vec![
        ModalityDecl::sequence("audio", 3, 8),
        ModalityDecl::sequence("text", 2, 6),
        ModalityDecl::tabular("sensors", 2),
    ])?;

    for mode in FusionMode::ALL {
        println!("== {mode} ==");
        let channels = embedding_channels(schema.modality_count(), mode)?;
        let labels: Vec<String> = channels.iter().map(|c| c.label_named(&schema)).collect();
        println!("embedding channels ({}): {}", channels.len(), labels.join(", "));

        let layout = build_token_layout(&schema, 1, mode)?;
        println!(
            "tokens: {} modality + {} fusion = {}",
            layout.modality_token_total(),
            layout.fusion_token_total(),
            layout.total_tokens
        );
        if mode != FusionMode::Eao {
            let cache = MaskCache::new(layout, mode)?;
            println!("base mask (1 = attend):\n{}", cache.base().to_bitmap_text());

            let presence = PresenceBitmap::from_present_indices(3, &[0, 2]);
            let availability = channel_availability(&presence, &channels);
            let available: Vec<&str> = channels
                .iter()
                .enumerate()
                .filter(|(i, _)| availability.is_available(*i))
                .map(|(i, _)| labels[i].as_str())
                .collect();
            println!("with text missing, available channels: {}\n", available.join(", "));
        } else {
            println!("no fusion tokens; one forward pass per unimodal/bimodal subset\n");
        }
    }
    Ok(())
}
