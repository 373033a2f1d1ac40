//! Round-trips a dataset through the on-disk manifest layout (JSON
//! manifest plus per-modality CSV files) and shows what gets written.

use modalfuse::data::{load_manifest, save_manifest, synthetic_multimodal, SyntheticConfig};
use modalfuse::schema::{ModalityDecl, ModalitySchema};

fn main() -> modalfuse::Result<()> {
    let schema = ModalitySchema::new(vec![
        ModalityDecl::sequence("audio", 3, 4),
        ModalityDecl::tabular("sensors", 3),
    ])?;
    let dataset = synthetic_multimodal(
        &schema,
        &SyntheticConfig { samples: 24, latent_dim: 3, noise: 0.1, classes: 2 },
        31,
    )?;

    let dir = std::env::temp_dir().join("modalfuse_manifest_example");
    let _ = std::fs::remove_dir_all(&dir);
    let manifest_path = save_manifest(&dataset, &dir)?;
    println!("manifest: {}", manifest_path.display());
    let mut names: Vec<String> = std::fs::read_dir(&dir)?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in names {
        println!("  {name}");
    }

    // The manifest stores one target column; class targets win when a
    // dataset carries both kinds.
    let reloaded = load_manifest(&manifest_path)?;
    assert_eq!(reloaded.samples.len(), dataset.samples.len());
    assert_eq!(reloaded.schema, dataset.schema);
    let with_class = reloaded.samples.iter().filter(|s| s.targets.class.is_some()).count();
    println!(
        "reloaded {} samples, {} with class targets, {} classes",
        reloaded.samples.len(),
        with_class,
        reloaded.class_count.map_or("?".into(), |c| c.to_string())
    );
    Ok(())
}
