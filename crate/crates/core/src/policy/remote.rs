use super::{Actor, ActorContext, ActorError, ChatClient, ChatTurn};
use crate::prompts::render_refine_turn;
use crate::trajectory::{AgentAction, CandidateBuffer};

/// Actor backed by a chat-completion endpoint.
#[derive(Debug, Clone)]
pub struct RemoteActor {
    client: ChatClient,
    m: usize,
    temperature: f64,
}

impl RemoteActor {
    pub fn new(client: ChatClient, m: usize, temperature: f64) -> Self {
        Self {
            client,
            m: m.max(1),
            temperature,
        }
    }
}

impl Actor for RemoteActor {
    fn sample_candidates(&mut self, ctx: &ActorContext<'_>) -> Result<CandidateBuffer, ActorError> {
        if ctx.prompt.is_empty() {
            return Err(ActorError::EmptyPrompt);
        }
        let texts = self
            .client
            .complete(ctx.prompt, self.m, self.temperature)
            .map_err(|e| ActorError::BackendUnavailable(e.to_string()))?;
        Ok(CandidateBuffer::new(
            texts.into_iter().map(AgentAction::from_raw).collect(),
        ))
    }

    /// The refine call appends the candidates and critiques as one more
    /// human turn and decodes greedily.
    fn refine_action(&mut self, ctx: &ActorContext<'_>, buffer: &CandidateBuffer) -> Result<AgentAction, ActorError> {
        if !buffer.is_criticised() {
            return Err(ActorError::NoCritiques);
        }
        let mut prompt = ctx.prompt.to_vec();
        prompt.push(ChatTurn::human(render_refine_turn(buffer)));
        let text = self
            .client
            .complete(&prompt, 1, 0.0)
            .map_err(|e| ActorError::BackendUnavailable(e.to_string()))?
            .remove(0);
        Ok(AgentAction::from_raw(text))
    }
}
