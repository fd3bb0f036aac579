//! Name-based resolution of providers and backends from configuration.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{
    toy_face_parser, AttributePredictor, EvalProviders, FaceParser, IdentityEmbedder, ToyAttributePredictor,
    ToyEvalProviders, ToyIdentityEmbedder,
};
use crate::backend::{Denoiser, ToyDenoiser, ToyDenoiserConfig};
use crate::error::{Error, Result};
use crate::losses::N_ATTRIBUTES;

/// Everything a factory may need to build its adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSettings {
    pub seed: u64,
    pub image_shape: [usize; 3],
    pub alphas_cumprod: Vec<f64>,
    /// Adapter-specific keys such as weight paths.
    pub options: BTreeMap<String, String>,
}

type Factory<T> = Arc<dyn Fn(&AdapterSettings) -> Result<Box<T>> + Send + Sync>;

#[derive(Clone)]
pub enum AdapterFactory {
    Embedder(Factory<dyn IdentityEmbedder>),
    Attributes(Factory<dyn AttributePredictor>),
    Parser(Factory<dyn FaceParser>),
    Eval(Factory<dyn EvalProviders>),
    Backend(Factory<dyn Denoiser>),
}

impl AdapterFactory {
    pub fn kind(&self) -> &'static str {
        match self {
            AdapterFactory::Embedder(_) => "embedder",
            AdapterFactory::Attributes(_) => "attributes",
            AdapterFactory::Parser(_) => "parser",
            AdapterFactory::Eval(_) => "eval",
            AdapterFactory::Backend(_) => "backend",
        }
    }
}

/// Registered factories, keyed by kind and then name.
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    entries: BTreeMap<(&'static str, String), AdapterFactory>,
}

fn external(name: &'static str, kind: &'static str) -> impl Fn(&AdapterSettings) -> Error + Send + Sync {
    move |settings| {
        let hint = match settings.options.get("weights") {
            Some(path) => format!("weights '{path}' were configured, but"),
            None => "no weights path was configured, and".to_string(),
        };
        Error::Provider {
            provider: name.to_string(),
            message: format!(
                "{hint} this build has no {kind} runtime for '{name}'; implement the {kind} trait around \
                 your framework and register it under this name"
            ),
        }
    }
}

impl ProviderRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Toy adapters under `"toy"`, plus named slots for real models that
    /// need external weights.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        let toy = "toy".to_string();
        r.register_adapter(
            &toy,
            AdapterFactory::Embedder(Arc::new(|s| Ok(Box::new(ToyIdentityEmbedder::new(s.seed, 64, 4.0))))),
        )
        .expect("fresh registry");
        r.register_adapter(
            &toy,
            AdapterFactory::Attributes(Arc::new(|s| {
                Ok(Box::new(ToyAttributePredictor::new(s.seed, N_ATTRIBUTES, 4.0)))
            })),
        )
        .expect("fresh registry");
        r.register_adapter(
            &toy,
            AdapterFactory::Parser(Arc::new(|_| Ok(Box::new(toy_face_parser())))),
        )
        .expect("fresh registry");
        r.register_adapter(
            &toy,
            AdapterFactory::Eval(Arc::new(|s| Ok(Box::new(ToyEvalProviders::new(s.seed))))),
        )
        .expect("fresh registry");
        r.register_adapter(
            &toy,
            AdapterFactory::Backend(Arc::new(|s| {
                let config = ToyDenoiserConfig {
                    seed: s.seed,
                    ..ToyDenoiserConfig::default()
                };
                let [h, w, _] = s.image_shape;
                Ok(Box::new(ToyDenoiser::new(h, w, &s.alphas_cumprod, config)?))
            })),
        )
        .expect("fresh registry");

        let facenet = external("facenet", "embedder");
        r.register_adapter("facenet", AdapterFactory::Embedder(Arc::new(move |s| Err(facenet(s)))))
            .expect("fresh registry");
        let arcface = external("arcface", "eval");
        r.register_adapter("arcface", AdapterFactory::Eval(Arc::new(move |s| Err(arcface(s)))))
            .expect("fresh registry");
        let fx_attr = external("facexformer", "attributes");
        r.register_adapter(
            "facexformer",
            AdapterFactory::Attributes(Arc::new(move |s| Err(fx_attr(s)))),
        )
        .expect("fresh registry");
        let fx_parse = external("facexformer", "parser");
        r.register_adapter(
            "facexformer",
            AdapterFactory::Parser(Arc::new(move |s| Err(fx_parse(s)))),
        )
        .expect("fresh registry");
        r
    }

    /// Registers `factory` under `name`; names are unique per kind.
    pub fn register_adapter(&mut self, name: &str, factory: AdapterFactory) -> Result<()> {
        let key = (factory.kind(), name.to_string());
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateAdapter {
                kind: factory.kind(),
                name: name.to_string(),
            });
        }
        self.entries.insert(key, factory);
        Ok(())
    }

    /// Registered names of one kind, sorted.
    pub fn names(&self, kind: &str) -> Vec<String> {
        self.entries
            .keys()
            .filter(|(k, _)| *k == kind)
            .map(|(_, n)| n.clone())
            .collect()
    }

    fn lookup(&self, kind: &'static str, name: &str) -> Result<&AdapterFactory> {
        self.entries
            .get(&(kind, name.to_string()))
            .ok_or_else(|| Error::UnknownAdapter {
                kind,
                name: name.to_string(),
                registered: self.names(kind),
            })
    }

    pub fn embedder(&self, name: &str, settings: &AdapterSettings) -> Result<Box<dyn IdentityEmbedder>> {
        match self.lookup("embedder", name)? {
            AdapterFactory::Embedder(f) => f(settings),
            _ => unreachable!("kind is part of the key"),
        }
    }

    pub fn attributes(&self, name: &str, settings: &AdapterSettings) -> Result<Box<dyn AttributePredictor>> {
        match self.lookup("attributes", name)? {
            AdapterFactory::Attributes(f) => f(settings),
            _ => unreachable!("kind is part of the key"),
        }
    }

    pub fn parser(&self, name: &str, settings: &AdapterSettings) -> Result<Box<dyn FaceParser>> {
        match self.lookup("parser", name)? {
            AdapterFactory::Parser(f) => f(settings),
            _ => unreachable!("kind is part of the key"),
        }
    }

    pub fn eval(&self, name: &str, settings: &AdapterSettings) -> Result<Box<dyn EvalProviders>> {
        match self.lookup("eval", name)? {
            AdapterFactory::Eval(f) => f(settings),
            _ => unreachable!("kind is part of the key"),
        }
    }

    pub fn backend(&self, name: &str, settings: &AdapterSettings) -> Result<Box<dyn Denoiser>> {
        match self.lookup("backend", name)? {
            AdapterFactory::Backend(f) => f(settings),
            _ => unreachable!("kind is part of the key"),
        }
    }
}
