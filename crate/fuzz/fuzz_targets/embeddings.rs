#![no_main]

use libfuzzer_sys::fuzz_target;
use mixlab::data::Vocab;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let vocab = Vocab::from_tokens(["the", "good", "bad", "movie"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _ = mixlab::models::parse_embeddings(text, &vocab, 4, &mut rng);
    }
});
