use curekit::lang::generate::generate_program;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Trimmed non-blank lines of generated programs.
pub fn fixture_lines(n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut lines = Vec::new();
    while lines.len() < n {
        let p = generate_program(&mut rng);
        for l in p.source.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if lines.len() < n {
                lines.push(l.to_string());
            }
        }
    }
    lines
}

pub const UNSEEN: [&str; 50] = [
    "binsearch", "charno", "qzx", "xylophone", "heapify", "zz9", "fooBarBaz", "k", "widget", "QUUX",
    "mergeSortedRuns", "bucket2", "vvv", "tmpl", "jrnl", "kraken", "snark", "boojum", "mimsy", "tove",
    "wabe", "gyre", "gimble", "borogove", "rath", "outgrabe", "jubjub", "vorpal", "tulgey", "uffish",
    "frumious", "bandersnatch", "galumph", "chortle", "beamish", "callooh", "callay", "brillig", "slithy", "manxome",
    "zq", "x0y1z2", "qwerty", "dvorak", "colemak", "pqrst", "abcxyz", "zzzzzz", "ycombinator", "lambda",
];
