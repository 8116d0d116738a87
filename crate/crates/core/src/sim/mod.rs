//! Cabin acoustic scene simulation.

pub mod dataset;
pub mod layout;
pub mod room;
pub mod scene;
pub mod source;

pub use dataset::{build_dataset, load_clip, read_manifest, render_clip, sample_manifest, SimulateConfig, Split};
pub use layout::ZoneLayout;
pub use room::{generate_rir, generate_rir_with, schroeder_t60, Position, RoomSpec};
pub use scene::{mix_scene, render_zone_images, Mixture, SceneManifest, ZoneImages};

/// SplitMix64 of `a` combined with `b`; derives independent child seeds.
pub fn split_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
