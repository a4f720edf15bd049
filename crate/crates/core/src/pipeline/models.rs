//! Construction of the policy variants from a run configuration.

use rand::Rng;

use crate::agent::{AdaptMode, AgentSpec};
use crate::config::NetConfig;
use crate::env::{EnvConfig, N_EXTRINSICS, N_JOINTS};
use crate::error::Result;
use crate::metagrad::ParameterSet;
use crate::mlp::MlpConfig;
use crate::network::{PlasticLayerConfig, PlasticRule, SnnArch, SnnInit};
use crate::rl::{ActorCritic, EstimatorSpec};
use crate::snn::Surrogate;

pub fn snn_arch(net: &NetConfig, env: &EnvConfig) -> SnnArch {
    let mut arch = SnnArch::new(env.obs_dim(), &net.hidden, N_JOINTS);
    arch.pop_per_action = net.pop_per_action;
    arch.surrogate = Surrogate {
        slope: net.surrogate_slope,
        width: net.surrogate_width,
    };
    arch.readout_gain = net.readout_gain;
    arch
}

fn value_net(net: &NetConfig, env: &EnvConfig) -> MlpConfig {
    MlpConfig::new("vf", env.obs_dim(), &net.value_hidden, 1)
}

/// Non-plastic spiking policy and critic.
pub fn base_model(net: &NetConfig, env: &EnvConfig, rng: &mut impl Rng) -> (ActorCritic, ParameterSet) {
    let arch = snn_arch(net, env);
    let mut ps = ParameterSet::new();
    let init = SnnInit {
        bias: net.init_bias,
        log_std: net.init_log_std,
        ..SnnInit::default()
    };
    arch.init_params(&mut ps, rng, &init);
    let value = value_net(net, env);
    value.init(&mut ps, rng, 1.0);
    (
        ActorCritic {
            agent: AgentSpec::plain(arch),
            value,
        },
        ps,
    )
}

fn plastic_config(net: &NetConfig, rule: PlasticRule) -> PlasticLayerConfig {
    PlasticLayerConfig {
        layer: net.plastic_layer,
        rule,
        broadcast: net.broadcast,
        update_scale: net.update_scale,
        beta: net.trace_beta,
    }
}

/// Base policy plus a modulated plastic layer driven by a privileged
/// encoder. The encoder's output layer starts at zero, so the initial agent
/// behaves exactly like the base policy.
pub fn modulated_model(
    net: &NetConfig,
    base: &ActorCritic,
    base_ps: &ParameterSet,
    rng: &mut impl Rng,
) -> Result<(ActorCritic, ParameterSet)> {
    let mut arch = base.agent.policy.clone();
    arch.plastic = Some(plastic_config(net, PlasticRule::Modulated));
    let mut ps = base_ps.clone();
    arch.init_plasticity(&mut ps, rng);
    let encoder = MlpConfig::new("enc", N_EXTRINSICS, &net.encoder_hidden, arch.modulator_dim());
    encoder.init(&mut ps, rng, 0.0);
    let agent = AgentSpec {
        policy: arch,
        mode: AdaptMode::Modulator,
        encoder: Some(encoder),
        modulator_gain: net.modulator_gain,
    };
    agent.validate()?;
    Ok((
        ActorCritic {
            agent,
            value: base.value.clone(),
        },
        ps,
    ))
}

/// Base policy plus an unmodulated STDP layer.
pub fn stdp_model(
    net: &NetConfig,
    base: &ActorCritic,
    base_ps: &ParameterSet,
    rng: &mut impl Rng,
) -> Result<(ActorCritic, ParameterSet)> {
    let mut arch = base.agent.policy.clone();
    arch.plastic = Some(plastic_config(net, PlasticRule::Stdp));
    let mut ps = base_ps.clone();
    arch.init_plasticity(&mut ps, rng);
    let agent = AgentSpec::plain(arch);
    agent.validate()?;
    Ok((
        ActorCritic {
            agent,
            value: base.value.clone(),
        },
        ps,
    ))
}

/// Base policy whose first layer also reads a latent `z = μ(e)`. The new
/// input columns start small and the encoder output starts at zero.
pub fn latent_model(
    net: &NetConfig,
    base: &ActorCritic,
    base_ps: &ParameterSet,
    rng: &mut impl Rng,
) -> Result<(ActorCritic, ParameterSet)> {
    let mut arch = base.agent.policy.clone();
    let mut ps = base_ps.clone();
    arch.widen_first_layer(&mut ps, net.latent_dim, rng, 0.1)?;
    arch.context_dim = net.latent_dim;
    let encoder = MlpConfig::new("enc", N_EXTRINSICS, &net.encoder_hidden, net.latent_dim);
    encoder.init(&mut ps, rng, 0.0);
    let agent = AgentSpec {
        policy: arch,
        mode: AdaptMode::Latent,
        encoder: Some(encoder),
        modulator_gain: 1.0,
    };
    agent.validate()?;
    Ok((
        ActorCritic {
            agent,
            value: base.value.clone(),
        },
        ps,
    ))
}

/// History estimator matching an agent's context dimension; adds its
/// parameters to `ps`.
pub fn add_estimator(net: &NetConfig, env: &EnvConfig, ac: &ActorCritic, ps: &mut ParameterSet, rng: &mut impl Rng) -> EstimatorSpec {
    let spec = EstimatorSpec::new(
        "est",
        net.history,
        env.obs_dim(),
        N_JOINTS,
        &net.estimator_hidden,
        ac.agent.context_dim(),
    );
    spec.net.init(ps, rng, 0.1);
    spec
}
