//! Write an embedding bundle and a prompt file, read them back, and take a
//! per-task view.
//!
//!     cargo run --example bundle_io

use memehead::bundle::{read_bundle, read_prompts, write_bundle, write_prompts, Split};
use memehead::synthetic::{indicator_prompts, separable_bundle, SyntheticSpec};

fn main() -> memehead::Result<()> {
    let dir = std::env::temp_dir().join("memehead-bundle-io");
    std::fs::create_dir_all(&dir)?;

    let bundle = separable_bundle(&SyntheticSpec::default());
    write_bundle(&bundle, dir.join("toy.meb"))?;
    write_prompts(&indicator_prompts(bundle.d_embed), dir.join("toy.mcp"))?;

    let back = read_bundle(dir.join("toy.meb"))?;
    assert_eq!(back, bundle);
    let prompts = read_prompts(dir.join("toy.mcp"))?;
    println!(
        "{} records, d_embed {}, tasks {:?}",
        back.records.len(),
        back.d_embed,
        back.tasks.iter().map(|t| &t.name).collect::<Vec<_>>()
    );
    println!(
        "prompt template {:?} for classes {:?}",
        prompts.prompt_template, prompts.class_names
    );

    for split in Split::ALL {
        let view = back.task_view("hate", split)?;
        println!(
            "{split}: {} samples, first id {}",
            view.len(),
            view.samples[0].id
        );
    }

    // A flipped byte fails the checksum.
    let mut bytes = std::fs::read(dir.join("toy.meb"))?;
    bytes[100] ^= 0x40;
    match memehead::EmbeddingBundle::from_bytes(&bytes) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
