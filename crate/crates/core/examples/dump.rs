use ovrun_core::corpus::{self, AccessForm, GenConfig, Level};
fn main() {
    let big = corpus::generate_corpus(&GenConfig { level: Level::L2, num_samples: 60, seed: 7, ..GenConfig::default() }).unwrap();
    for s in big.iter().filter(|s| s.meta.access_form == AccessForm::Strcpy).take(3) {
        println!("--- label {} dest_size {} access {} ---", s.label, s.meta.dest_size, s.meta.access_size);
        for l in &s.story { println!("  {l}"); }
        println!("  Q: {}", s.query);
    }
}
