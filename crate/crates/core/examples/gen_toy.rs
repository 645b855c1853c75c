//! Generates the bundled toy benchmark: a small typed knowledge graph with
//! functional, many-to-many, symmetric and composed relations.
//!
//! cargo run --example gen_toy -- data/toy

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20240611;

struct Types {
    person: usize,
    city: usize,
    country: usize,
    company: usize,
    university: usize,
    language: usize,
    sport: usize,
}

const SIZES: Types = Types {
    person: 120,
    city: 30,
    country: 6,
    company: 16,
    university: 10,
    language: 8,
    sport: 8,
};

fn name(kind: &str, i: usize) -> String {
    format!("{kind}_{i:03}")
}

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/toy".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut triples: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut add = |h: String, r: &str, t: String| {
        triples.insert((h, r.to_owned(), t));
    };

    // Geography: every city sits in one country; the first city of each
    // country is its capital.
    let city_country: Vec<usize> = (0..SIZES.city).map(|c| c % SIZES.country).collect();
    let country_language: Vec<usize> = (0..SIZES.country).map(|c| c % SIZES.language).collect();
    for (c, &country) in city_country.iter().enumerate() {
        add(name("city", c), "located_in", name("country", country));
        if c < SIZES.country {
            add(name("city", c), "capital_of", name("country", c));
        }
    }
    for (c, &language) in country_language.iter().enumerate() {
        add(name("country", c), "official_language", name("language", language));
    }
    let company_city: Vec<usize> = (0..SIZES.company).map(|_| rng.gen_range(0..SIZES.city)).collect();
    for (co, &city) in company_city.iter().enumerate() {
        add(name("company", co), "headquartered_in", name("city", city));
    }
    let university_city: Vec<usize> = (0..SIZES.university).map(|_| rng.gen_range(0..SIZES.city)).collect();
    for (u, &city) in university_city.iter().enumerate() {
        add(name("university", u), "university_in", name("city", city));
    }

    // People: home city, employer, university, languages, sports.
    let mut home = Vec::new();
    for p in 0..SIZES.person {
        let city = rng.gen_range(0..SIZES.city);
        home.push(city);
        add(name("person", p), "lives_in", name("city", city));
        if rng.gen_bool(0.7) {
            // Mostly born where they live.
            let born = if rng.gen_bool(0.8) { city } else { rng.gen_range(0..SIZES.city) };
            add(name("person", p), "born_in", name("city", born));
        }
        add(name("person", p), "citizen_of", name("country", city_country[city]));
        let local: Vec<usize> = (0..SIZES.company).filter(|&c| company_city[c] == city).collect();
        let employer = match local.choose(&mut rng) {
            Some(&c) if rng.gen_bool(0.8) => c,
            _ => rng.gen_range(0..SIZES.company),
        };
        add(name("person", p), "works_for", name("company", employer));
        if rng.gen_bool(0.6) {
            add(name("person", p), "studied_at", name("university", rng.gen_range(0..SIZES.university)));
        }
        add(name("person", p), "speaks", name("language", country_language[city_country[city]]));
        if rng.gen_bool(0.4) {
            add(name("person", p), "speaks", name("language", rng.gen_range(0..SIZES.language)));
        }
        let n_sports = rng.gen_range(0..3);
        for s in rand::seq::index::sample(&mut rng, SIZES.sport, n_sports) {
            add(name("person", p), "plays", name("sport", s));
        }
    }
    // Friendship is symmetric and mostly local.
    for p in 0..SIZES.person {
        for _ in 0..2 {
            let q = loop {
                let q = if rng.gen_bool(0.7) {
                    let neighbours: Vec<usize> =
                        (0..SIZES.person).filter(|&q| q != p && home[q] == home[p]).collect();
                    match neighbours.choose(&mut rng) {
                        Some(&q) => q,
                        None => rng.gen_range(0..SIZES.person),
                    }
                } else {
                    rng.gen_range(0..SIZES.person)
                };
                if q != p {
                    break q;
                }
            };
            add(name("person", p), "friend_of", name("person", q));
            add(name("person", q), "friend_of", name("person", p));
        }
    }

    let mut all: Vec<_> = triples.into_iter().collect();
    all.shuffle(&mut rng);
    // Valid and test only keep triples whose entities and relation also
    // occur in the train split.
    let n = all.len();
    let held = n / 10;
    let mut train: Vec<_> = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    let mut seen_count = std::collections::HashMap::<String, usize>::new();
    for (h, r, t) in &all {
        for key in [h, r, t] {
            *seen_count.entry(key.clone()).or_default() += 1;
        }
    }
    for triple in all {
        let (h, r, t) = &triple;
        let removable = [h, r, t].iter().all(|k| seen_count[*k] > 1);
        if removable && valid.len() < held {
            for k in [h, r, t] {
                *seen_count.get_mut(k).unwrap() -= 1;
            }
            valid.push(triple);
        } else if removable && test.len() < held {
            for k in [h, r, t] {
                *seen_count.get_mut(k).unwrap() -= 1;
            }
            test.push(triple);
        } else {
            train.push(triple);
        }
    }
    train.sort();
    valid.sort();
    test.sort();

    fs::create_dir_all(&out)?;
    for (file, rows) in [("train.txt", &train), ("valid.txt", &valid), ("test.txt", &test)] {
        let text: String = rows.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
        fs::write(out.join(file), text)?;
    }
    eprintln!(
        "wrote {} train / {} valid / {} test triples to {}",
        train.len(),
        valid.len(),
        test.len(),
        out.display()
    );
    Ok(())
}
