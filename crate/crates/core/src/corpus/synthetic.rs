//! Seeded toy dialogues for desk-scale runs.
//!
//! The user turn carries an emotion cue word and a topic word; the reply is
//! an emotion-specific template that mentions the topic. History turns are
//! filler sentences drawn from a pseudo-word pool.

use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::MappedDialogue;
use super::emotion::{sentiment_of, DatasetTag, Emotion, LabelSpace};
use crate::rng;

fn cues(e: Emotion) -> &'static [&'static str] {
    match e {
        Emotion::Joy => &["happy", "thrilled", "delighted", "glad"],
        Emotion::Surprise => &["shocked", "amazed", "stunned", "astonished"],
        Emotion::Anticipation => &["eager", "expecting", "awaiting", "ready"],
        Emotion::Love => &["adore", "cherish", "treasure", "miss"],
        Emotion::Trust => &["rely", "believe", "count", "depend"],
        Emotion::Anger => &["furious", "mad", "outraged", "livid"],
        Emotion::Disgust => &["gross", "revolted", "sickened", "repulsed"],
        Emotion::Fear => &["scared", "worried", "nervous", "frightened"],
        Emotion::Sadness => &["sad", "heartbroken", "down", "blue"],
        Emotion::Remorse => &["sorry", "regret", "guilty", "ashamed"],
        Emotion::NoEmotion => &["saw", "went", "read", "noticed"],
    }
}

fn reply(e: Emotion) -> &'static str {
    match e {
        Emotion::Joy => "that is wonderful news about your",
        Emotion::Surprise => "wow i did not expect that with your",
        Emotion::Anticipation => "i hope it goes well with your",
        Emotion::Love => "it is sweet how much you care about your",
        Emotion::Trust => "it is good to have faith in your",
        Emotion::Anger => "that sounds really frustrating about your",
        Emotion::Disgust => "ugh that is awful about your",
        Emotion::Fear => "do not worry too much about your",
        Emotion::Sadness => "i am so sorry to hear about your",
        Emotion::Remorse => "everyone makes mistakes with their",
        Emotion::NoEmotion => "okay tell me more about your",
    }
}

fn pseudo_words(prefix: &str, n: usize, offset: usize) -> Vec<String> {
    const C: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
    const V: [&str; 5] = ["a", "e", "i", "o", "u"];
    (0..n)
        .map(|i| {
            let k = i + offset;
            format!(
                "{prefix}{}{}{}{}",
                C[k % 12],
                V[(k / 12) % 5],
                C[(k / 60 + 7 * k) % 12],
                V[(k / 3) % 5]
            )
        })
        .collect()
}

/// `n` examples cycling through the label space's emotions. Roughly
/// `n_topics + n_filler + ~50` distinct tokens.
pub fn synthetic_corpus(
    n: usize,
    labels: &LabelSpace,
    n_topics: usize,
    n_filler: usize,
    seed: u64,
) -> Vec<MappedDialogue> {
    let mut rng = rng::derive(seed, "synthetic");
    let topics = pseudo_words("", n_topics, 0);
    let filler = pseudo_words("", n_filler, n_topics);
    let dataset = if labels.emotions.contains(&Emotion::NoEmotion) {
        DatasetTag::Dd
    } else {
        DatasetTag::Ed
    };
    let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    (0..n)
        .map(|i| {
            let emotion = labels.emotions[i % labels.emotions.len()];
            let topic = topics.choose(&mut rng).unwrap().clone();
            let cue = cues(emotion).choose(&mut rng).unwrap().to_string();
            let n_hist = rng.gen_range(0..=2);
            let context_turns = (0..n_hist)
                .map(|_| {
                    let len = rng.gen_range(3..=6);
                    (0..len).map(|_| filler.choose(&mut rng).unwrap().clone()).collect()
                })
                .collect();
            let mut current = split("i feel");
            current.push(cue);
            current.extend(split("about my"));
            current.push(topic.clone());
            let mut response = split(reply(emotion));
            response.push(topic);
            response.push(".".into());
            MappedDialogue {
                conversation_id: format!("syn{i:05}"),
                dataset,
                split: None,
                context_turns,
                current_turn: current,
                response,
                emotion,
                sentiment: sentiment_of(emotion, dataset).expect("label space matches dataset"),
            }
        })
        .collect()
}
