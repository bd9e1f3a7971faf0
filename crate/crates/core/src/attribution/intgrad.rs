use super::{prepare, token_map, AttributionError, AttributionMap, IntegrationConfig, Method};
use crate::grad::Tensor;
use crate::model::{Instance, MicroTransformer, Objective, Request, PAD};

/// Midpoint-rule path integral `(x − b) ⊙ mean_k ∇F(b + α_k (x − b))`.
///
/// `grad` returns `∇F` at a point of the same shape as `input`.
pub fn integrated_gradients<F>(
    input: &Tensor,
    baseline: &Tensor,
    cfg: &IntegrationConfig,
    mut grad: F,
) -> Result<Tensor, AttributionError>
where
    F: FnMut(&Tensor) -> Result<Tensor, AttributionError>,
{
    cfg.validate()?;
    assert_eq!(input.shape(), baseline.shape(), "input and baseline shapes differ");
    let delta: Vec<f64> = input.data().iter().zip(baseline.data()).map(|(x, b)| x - b).collect();
    let mut total = Tensor::zeros(input.shape());
    for alpha in cfg.alphas() {
        let point: Vec<f64> = baseline.data().iter().zip(&delta).map(|(b, d)| b + alpha * d).collect();
        let point = Tensor::new(input.shape().to_vec(), point).expect("same shape");
        total.add_assign(&grad(&point)?);
    }
    let m = cfg.steps as f64;
    let attr: Vec<f64> = total.data().iter().zip(&delta).map(|(g, d)| d * g / m).collect();
    Ok(Tensor::new(input.shape().to_vec(), attr).expect("same shape"))
}

/// Token IntGrad together with the path endpoints, for completeness checks.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenIntGrad {
    pub map: AttributionMap,
    /// `F(e)` at the actual embeddings.
    pub value: f64,
    /// `F(b)` at the all-PAD embedding baseline.
    pub baseline_value: f64,
}

impl TokenIntGrad {
    pub fn completeness_gap(&self) -> f64 {
        let total: f64 = self.map.scores.iter().sum();
        (total - (self.value - self.baseline_value)).abs()
    }
}

/// Integrated gradients on token embeddings, summed over the embedding dimension.
pub fn intgrad_tokens(
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &IntegrationConfig,
) -> Result<AttributionMap, AttributionError> {
    Ok(intgrad_tokens_detailed(model, instance, cfg)?.map)
}

pub fn intgrad_tokens_detailed(
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &IntegrationConfig,
) -> Result<TokenIntGrad, AttributionError> {
    cfg.validate()?;
    let prepared = prepare(model, instance)?;
    let seq = &prepared.seq;
    let target = prepared.prediction.target;
    let input = model.token_embeddings(&seq.ids);
    let baseline = model.token_embeddings(&vec![PAD; seq.len()]);
    let eval = |e: &Tensor| {
        let mut req = Request::new(seq);
        req.embeddings = Some(e);
        req.objective = Objective::Target(target);
        model.evaluate(&req)
    };
    let attr = integrated_gradients(&input, &baseline, cfg, |e| {
        Ok(eval(e)?.embedding_grad.expect("embedding input is marked"))
    })?;
    let per_token: Vec<f64> = (0..attr.rows()).map(|i| attr.row_slice(i).iter().sum()).collect();
    if per_token.iter().any(|v| !v.is_finite()) {
        return Err(AttributionError::NonFinite("intgrad"));
    }
    let mut map = token_map(Method::IntGrad, instance, &prepared, &per_token);
    map.m = Some(cfg.steps);
    Ok(TokenIntGrad {
        map,
        value: eval(&input)?.objective.expect("target"),
        baseline_value: eval(&baseline)?.objective.expect("target"),
    })
}
