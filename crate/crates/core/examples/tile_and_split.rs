//! Tiles one large scene into patches, then makes a seeded train/val/test split.
//!
//! cargo run --release --example tile_and_split -- [tile] [seed]

use kdmsi::data::{derive_image_label, generate_synthetic_dataset, split_dataset, tile_scene, SplitRatios, SynthSpec};

fn main() -> kdmsi::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let tile = args.first().copied().unwrap_or(64);
    let seed = args.get(1).copied().unwrap_or(7) as u64;

    // one 256x320 "scene" with plenty of objects
    let spec = SynthSpec {
        height: 256,
        width: 320,
        min_objects: 6,
        max_objects: 10,
        no_change_fraction: 0.0,
        ..SynthSpec::default()
    };
    let scene = generate_synthetic_dataset(&spec, 1, seed)?.remove(0);
    let tiles = tile_scene(&scene.pair, &scene.mask, tile)?;
    println!("scene {}x{} -> {} tiles of {tile}", spec.height, spec.width, tiles.len());

    for (pair, mask) in tiles.iter().take(6) {
        let label = derive_image_label(mask, 0.0);
        println!("  {:<14} changed px {:>5}  label {:?}", pair.id, mask.count_changed(), label);
    }

    let ids: Vec<&str> = tiles.iter().map(|(p, _)| p.id.as_str()).collect();
    let split = split_dataset(&ids, SplitRatios::default(), seed)?;
    let (tr, va, te) = split.sizes();
    println!("split train/val/test = {tr}/{va}/{te}");
    println!("test ids: {:?}", split.test);
    Ok(())
}
