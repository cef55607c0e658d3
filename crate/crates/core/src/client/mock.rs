use super::{BackendKind, ClientError, CompletionBackend, CompletionRequest};
use crate::messenger::NodeTask;

/// Deterministic smoothness predictor standing in for a language model.
///
/// Blends the node's previous estimate with the mean of its neighbor values:
/// `alpha * prev + (1 - alpha) * mean(neighbors)`. When one side is missing
/// the other gets full weight. An infeasible task yields the text `"NaN"`.
pub fn mock_predict(task: &NodeTask, alpha: f64) -> String {
    let neighbor_mean = (!task.neighbor_values.is_empty()).then(|| {
        task.neighbor_values.iter().map(|n| n.value).sum::<f64>()
            / task.neighbor_values.len() as f64
    });
    let value = match (task.prev_estimate, neighbor_mean) {
        (Some(p), Some(m)) => alpha * p + (1.0 - alpha) * m,
        (Some(p), None) => p,
        (None, Some(m)) => m,
        (None, None) => return "NaN".to_owned(),
    };
    format!("{value}")
}

#[derive(Debug, Clone, Copy)]
pub struct MockBackend {
    alpha: f64,
}

impl MockBackend {
    pub fn new(alpha: f64) -> Self {
        Self { alpha }
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError> {
        let task = req.task.as_ref().ok_or_else(|| {
            ClientError::Config("mock backend needs the structured node task".into())
        })?;
        Ok(mock_predict(task, self.alpha))
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messenger::{Freshness, NeighborValue};

    fn task(prev: Option<f64>, nbrs: &[f64]) -> NodeTask {
        NodeTask {
            node_id: 0,
            time_index: 1,
            prev_estimate: prev,
            neighbor_values: nbrs
                .iter()
                .enumerate()
                .map(|(i, &value)| NeighborValue {
                    node_id: i + 1,
                    value,
                    freshness: Freshness::CurrentObserved,
                })
                .collect(),
            units: String::new(),
        }
    }

    #[test]
    fn examples() {
        assert_eq!(mock_predict(&task(Some(3.0), &[2.0, 4.0]), 0.5), "3");
        assert_eq!(mock_predict(&task(None, &[2.0, 4.0]), 0.5), "3");
        assert_eq!(mock_predict(&task(Some(1.25), &[]), 0.2), "1.25");
        assert_eq!(mock_predict(&task(None, &[]), 0.5), "NaN");
        assert_eq!(mock_predict(&task(Some(2.0), &[4.0]), 0.25), "3.5");
    }

    #[test]
    fn backend_is_stateless() {
        let backend = MockBackend::new(0.5);
        let mk = |prev| CompletionRequest {
            prompt: String::new(),
            model: "mock".into(),
            temperature: 0.0,
            max_tokens: 8,
            request_id: "x".into(),
            task: Some(task(Some(prev), &[1.0])),
        };
        let a1 = backend.complete(&mk(3.0)).unwrap();
        let _ = backend.complete(&mk(7.0)).unwrap();
        let a2 = backend.complete(&mk(3.0)).unwrap();
        assert_eq!(a1, a2);
        let mut bare = mk(1.0);
        bare.task = None;
        assert!(backend.complete(&bare).is_err());
    }
}
