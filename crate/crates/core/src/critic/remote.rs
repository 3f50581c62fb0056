use super::{parse_critique, render_critique_prompt, Critic, CriticError, Critique, CritiqueRequest};
use crate::policy::ChatClient;

/// Critic backed by a chat-completion endpoint. A response without a
/// parsable grade is re-requested up to `attempts` times in total.
#[derive(Debug, Clone)]
pub struct RemoteCritic {
    client: ChatClient,
    attempts: usize,
    expert: bool,
}

impl RemoteCritic {
    pub fn new(client: ChatClient) -> Self {
        Self {
            client,
            attempts: 3,
            expert: false,
        }
    }

    pub fn with_attempts(mut self, attempts: usize) -> Self {
        self.attempts = attempts.max(1);
        self
    }

    /// Marks this critic as producing gold-path critiques.
    pub fn expert(mut self) -> Self {
        self.expert = true;
        self
    }
}

impl Critic for RemoteCritic {
    fn critique(&mut self, req: &CritiqueRequest) -> Result<Critique, CriticError> {
        let prompt = render_critique_prompt(req)?;
        for attempt in 1..=self.attempts {
            let text = self
                .client
                .complete(&prompt, 1, 0.0)
                .map_err(|e| CriticError::BackendUnavailable(e.to_string()))?
                .remove(0);
            match parse_critique(&text) {
                Ok(c) => return Ok(c),
                Err(_) => log::warn!("critique without grade (attempt {attempt}/{})", self.attempts),
            }
        }
        Err(CriticError::MissingGrade(self.attempts))
    }

    fn is_expert(&self) -> bool {
        self.expert
    }
}
