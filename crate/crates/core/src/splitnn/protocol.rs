//! The two parties of split training and the messages they exchange.
//!
//! Per training batch the owner sends a `Control[LABELS, y...]` frame and the
//! (possibly noisy) intermediate as `ForwardActivation`; the server answers
//! with `BackwardGradient` carrying dL_task/d(intermediate) under the same
//! batch id, followed by `Control[LOSS, value]`. For inference the owner sends
//! `Control[PREDICT]` and the activation, and the server answers with a
//! `Prediction` frame holding the logits. `Control[SHUTDOWN]` ends a session.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::noise::{NoiseConfig, Phase};
use crate::channel::{ChannelMessage, MessageKind, Transport};
use crate::error::{Error, Result};
use crate::model::Segment;
use crate::tensor::{Adam, Tape, Tensor};

const OP_LABELS: f32 = 1.0;
const OP_PREDICT: f32 = 2.0;
const OP_LOSS: f32 = 3.0;
const OP_SHUTDOWN: f32 = 4.0;

fn control(batch_id: u64, words: Vec<f32>) -> ChannelMessage {
    let len = words.len() as u32;
    ChannelMessage::new(MessageKind::Control, batch_id, vec![len], words).expect("1-D payload")
}

fn expect(msg: ChannelMessage, kind: MessageKind, batch_id: u64) -> Result<ChannelMessage> {
    if msg.kind != kind {
        return Err(Error::Protocol(format!("expected {kind:?}, received {:?}", msg.kind)));
    }
    if msg.batch_id != batch_id {
        return Err(Error::Protocol(format!(
            "batch id mismatch: expected {batch_id}, received {}",
            msg.batch_id
        )));
    }
    Ok(msg)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServerReport {
    pub batches_trained: u64,
    pub predictions_served: u64,
}

enum Pending {
    None,
    Train(Vec<usize>),
    Predict,
}

/// Runs the computational-server loop until the owner sends SHUTDOWN.
///
/// The server only ever sees intermediates, labels and its own parameters.
pub fn serve<T: Transport + ?Sized>(segment: &mut Segment, transport: &mut T, adam: Adam) -> Result<ServerReport> {
    let mut report = ServerReport::default();
    let mut pending = Pending::None;
    loop {
        let msg = transport.recv()?;
        match msg.kind {
            MessageKind::Control => {
                let op = msg.payload().first().copied();
                pending = match op {
                    Some(OP_LABELS) => {
                        let labels = msg.payload()[1..].iter().map(|&v| v as usize).collect();
                        Pending::Train(labels)
                    }
                    Some(OP_PREDICT) => Pending::Predict,
                    Some(OP_SHUTDOWN) => return Ok(report),
                    other => return Err(Error::Protocol(format!("unknown control opcode {other:?}"))),
                };
            }
            MessageKind::ForwardActivation => {
                let batch_id = msg.batch_id;
                let activation = msg.into_tensor()?;
                match std::mem::replace(&mut pending, Pending::None) {
                    Pending::Train(labels) => {
                        let mut tape = Tape::new();
                        let x = tape.leaf(activation, true);
                        let trace = segment.forward(&mut tape, x)?;
                        let loss = tape.softmax_cross_entropy(trace.output, &labels)?;
                        let loss_value = tape.value(loss).item();
                        let mut grads = tape.backward(loss)?;
                        let grad_in = grads.take(x).expect("activation is a trainable leaf");
                        segment.step(&trace, &mut grads, &adam)?;
                        transport.send(&ChannelMessage::from_tensor(
                            MessageKind::BackwardGradient,
                            batch_id,
                            &grad_in,
                        ))?;
                        transport.send(&control(batch_id, vec![OP_LOSS, loss_value]))?;
                        report.batches_trained += 1;
                    }
                    Pending::Predict => {
                        let logits = segment.infer(&activation)?;
                        transport.send(&ChannelMessage::from_tensor(MessageKind::Prediction, batch_id, &logits))?;
                        report.predictions_served += 1;
                    }
                    Pending::None => {
                        return Err(Error::Protocol(
                            "activation arrived without a preceding control frame".into(),
                        ))
                    }
                }
            }
            other => return Err(Error::Protocol(format!("server cannot handle {other:?}"))),
        }
    }
}

/// Result of one owner-to-server forward pass.
pub struct SplitForward {
    pub intermediate_clean: Tensor,
    pub intermediate_sent: Tensor,
    pub logits: Tensor,
}

/// Inference through the split: `f1` locally, noise, then `f2` on the server.
pub fn forward_split<T: Transport + ?Sized, R: Rng + ?Sized>(
    owner: &Segment,
    inputs: &Tensor,
    noise: &NoiseConfig,
    rng: &mut R,
    transport: &mut T,
    batch_id: u64,
) -> Result<SplitForward> {
    let intermediate_clean = owner.infer(inputs)?;
    let intermediate_sent = noise.apply(&intermediate_clean, Phase::Inference, rng);
    transport.send(&control(batch_id, vec![OP_PREDICT]))?;
    transport.send(&ChannelMessage::from_tensor(
        MessageKind::ForwardActivation,
        batch_id,
        &intermediate_sent,
    ))?;
    let reply = expect(transport.recv()?, MessageKind::Prediction, batch_id)?;
    Ok(SplitForward {
        intermediate_clean,
        intermediate_sent,
        logits: reply.into_tensor()?,
    })
}

/// Losses observed for one training batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub task: f32,
    pub dcor: f32,
}

/// The data owner: holds `f1`, applies the noise defence and the
/// distance-correlation penalty.
pub struct DataOwner {
    pub segment: Segment,
    adam: Adam,
    alpha: f32,
    noise: NoiseConfig,
    rng: ChaCha8Rng,
    next_batch: u64,
}

impl DataOwner {
    pub fn new(segment: Segment, adam: Adam, alpha: f32, noise: NoiseConfig, rng: ChaCha8Rng) -> Self {
        Self {
            segment,
            adam,
            alpha,
            noise,
            rng,
            next_batch: 0,
        }
    }

    /// One combined update: the server's gradient on the intermediate plus
    /// `alpha * d dCor(inputs, intermediate) / d intermediate` seed the
    /// backward pass through `f1`.
    pub fn train_step<T: Transport + ?Sized>(
        &mut self,
        transport: &mut T,
        images: &Tensor,
        labels: &[usize],
    ) -> Result<StepLosses> {
        let batch_id = self.next_batch;
        self.next_batch += 1;

        let mut tape = Tape::new();
        let x = tape.leaf(images.clone(), false);
        let trace = self.segment.forward(&mut tape, x)?;
        let intermediate = trace.output;
        let dcor = if self.alpha > 0.0 {
            Some(tape.dcor_loss(&images.flatten_rows(), intermediate)?)
        } else {
            None
        };
        let sent = self
            .noise
            .apply(tape.value(intermediate), Phase::Training, &mut self.rng);

        let mut words = Vec::with_capacity(labels.len() + 1);
        words.push(OP_LABELS);
        words.extend(labels.iter().map(|&l| l as f32));
        transport.send(&control(batch_id, words))?;
        transport.send(&ChannelMessage::from_tensor(
            MessageKind::ForwardActivation,
            batch_id,
            &sent,
        ))?;

        let grad = expect(transport.recv()?, MessageKind::BackwardGradient, batch_id)?.into_tensor()?;
        let loss_msg = expect(transport.recv()?, MessageKind::Control, batch_id)?;
        let task = match loss_msg.payload() {
            [op, v] if *op == OP_LOSS => *v,
            other => return Err(Error::Protocol(format!("malformed loss report {other:?}"))),
        };

        let mut seeds = vec![(intermediate, grad)];
        let mut dcor_value = 0.0;
        if let Some(d) = dcor {
            dcor_value = tape.value(d).item();
            seeds.push((d, Tensor::scalar(self.alpha)));
        }
        let mut grads = tape.backward_seeded(seeds)?;
        self.segment.step(&trace, &mut grads, &self.adam)?;
        Ok(StepLosses { task, dcor: dcor_value })
    }

    pub fn predict<T: Transport + ?Sized>(&mut self, transport: &mut T, images: &Tensor) -> Result<SplitForward> {
        let batch_id = self.next_batch;
        self.next_batch += 1;
        forward_split(&self.segment, images, &self.noise, &mut self.rng, transport, batch_id)
    }

    pub fn shutdown<T: Transport + ?Sized>(&mut self, transport: &mut T) -> Result<()> {
        transport.send(&control(self.next_batch, vec![OP_SHUTDOWN]))
    }
}
