//! Interactive terminal session.

use std::io::{self, BufRead, Write};

use asem::corpus::{tokenize, Batch};
use asem::decoding::{beam_decode, BeamConfig};
use asem::eval::{classify, Prediction};
use asem::training::Checkpoint;

/// Running conversation against one model. Each exchange appends the user
/// turn and the model turn to the context.
pub struct Session<'a> {
    ckpt: &'a Checkpoint,
    beam: &'a BeamConfig,
    turns: Vec<Vec<usize>>,
}

pub struct Reply {
    pub prediction: Prediction,
    pub response: Vec<usize>,
}

impl<'a> Session<'a> {
    pub fn new(ckpt: &'a Checkpoint, beam: &'a BeamConfig) -> Self {
        Session {
            ckpt,
            beam,
            turns: Vec::new(),
        }
    }

    #[cfg(test)]
    fn turns(&self) -> usize {
        self.turns.len()
    }

    pub fn reset(&mut self) {
        self.turns.clear();
    }

    /// Model input for `utterance` following the current context.
    pub fn batch_for(&self, utterance: &str) -> Batch {
        let current = self.ckpt.vocab.encode(&tokenize(utterance));
        Batch::for_context(&self.turns.concat(), &current, self.ckpt.model.max_len)
    }

    pub fn respond(&mut self, utterance: &str) -> Reply {
        let batch = self.batch_for(utterance);
        let (params, model) = (&self.ckpt.params, &self.ckpt.model);
        let prediction = classify(params, model, &batch).remove(0);
        let response = beam_decode(params, model, &batch, self.beam)
            .remove(0)
            .into_iter()
            .next()
            .map(|c| c.tokens)
            .unwrap_or_default();
        self.turns.push(self.ckpt.vocab.encode(&tokenize(utterance)));
        self.turns.push(response.clone());
        Reply { prediction, response }
    }
}

fn top_k(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn render(ckpt: &Checkpoint, reply: &Reply, out: &mut impl Write) -> io::Result<()> {
    let p = &reply.prediction;
    let labels = &ckpt.labels;
    writeln!(
        out,
        "sentiment: {} ({:.3})",
        labels.sentiments[p.sentiment].name(),
        p.sentiment_probs[p.sentiment]
    )?;
    let top: Vec<String> = top_k(&p.emotion_probs, 3)
        .into_iter()
        .map(|i| format!("{} {:.3}", labels.emotions[i].name(), p.emotion_probs[i]))
        .collect();
    writeln!(
        out,
        "emotion: {} ({:.3})  top-3: {}",
        labels.emotions[p.emotion].name(),
        p.emotion_probs[p.emotion],
        top.join(", ")
    )?;
    writeln!(out, "reply: {}", ckpt.vocab.detokenize(&reply.response))
}

pub fn run(ckpt: &Checkpoint, beam: &BeamConfig, input: impl BufRead, mut out: impl Write) -> io::Result<()> {
    let mut session = Session::new(ckpt, beam);
    writeln!(out, "type a message; /reset clears the context, /quit exits")?;
    write!(out, "> ")?;
    out.flush()?;
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        match text {
            "/quit" => break,
            "/reset" => {
                session.reset();
                writeln!(out, "context cleared")?;
            }
            "" => {}
            _ if text.starts_with('/') => writeln!(out, "unknown command {text}")?,
            _ if tokenize(text).is_empty() => writeln!(out, "nothing to answer")?,
            _ => {
                let reply = session.respond(text);
                render(ckpt, &reply, &mut out)?;
            }
        }
        write!(out, "> ")?;
        out.flush()?;
    }
    writeln!(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use asem::corpus::{build_vocab, synthetic_corpus, DatasetTag, LabelSpace};
    use asem::model::ModelConfig;
    use asem::training::TrainConfig;

    fn checkpoint() -> Checkpoint {
        let labels = LabelSpace::for_dataset(DatasetTag::Ed);
        let corpus = synthetic_corpus(20, &labels, 5, 10, 1);
        let vocab = build_vocab(&corpus, 1).unwrap();
        let model = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            embed_dim: 8,
            ffn_dim: 16,
            n_layers: 1,
            max_len: 40,
            ..ModelConfig::default()
        };
        Checkpoint::init(model, TrainConfig::default(), vocab, labels, None).unwrap()
    }

    #[test]
    fn context_grows_by_two_turns_per_exchange() {
        let ckpt = checkpoint();
        let beam = BeamConfig {
            width: 2,
            max_new_tokens: 4,
            ..BeamConfig::default()
        };
        let mut s = Session::new(&ckpt, &beam);
        s.respond("i feel sad about my dog");
        assert_eq!(s.turns(), 2);
        let reply = s.respond("it was old");
        assert_eq!(s.turns(), 4);
        assert_eq!(s.turns[3], reply.response);
        s.reset();
        assert_eq!(s.turns(), 0);
    }

    #[test]
    fn session_output_and_commands() {
        let ckpt = checkpoint();
        let beam = BeamConfig::default();
        let mut out = Vec::new();
        run(&ckpt, &beam, "hello there\n/bogus\n/reset\n/quit\nignored\n".as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.matches("reply: ").count(), 1);
        assert!(text.contains("top-3: "));
        assert!(text.contains("unknown command /bogus"));
        assert!(text.contains("context cleared"));
    }

    #[test]
    fn top_k_orders_by_probability_then_index() {
        assert_eq!(top_k(&[0.2, 0.5, 0.2, 0.1], 3), vec![1, 0, 2]);
        assert_eq!(top_k(&[1.0], 3), vec![0]);
    }
}
