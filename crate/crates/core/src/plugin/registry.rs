use std::collections::BTreeMap;
use std::sync::Arc;

use super::{PluginConfig, PluginError, SitePlugin, VendorPlugin};
use crate::mock::MockVendor;

pub type VendorFactory = Arc<dyn Fn(&PluginConfig) -> Arc<dyn VendorPlugin> + Send + Sync>;
pub type SiteFactory = Arc<dyn Fn(&PluginConfig) -> Arc<dyn SitePlugin> + Send + Sync>;

/// Name-to-factory tables consulted once at startup. Lookups are exact and
/// case-sensitive.
#[derive(Clone, Default)]
pub struct PluginRegistry {
    vendors: BTreeMap<String, VendorFactory>,
    sites: BTreeMap<String, SiteFactory>,
}

/// The single vendor/site pair a process runs with.
#[derive(Clone)]
pub struct LoadedPlugins {
    pub vendor: Arc<dyn VendorPlugin>,
    pub site: Arc<dyn SitePlugin>,
}

impl std::fmt::Debug for LoadedPlugins {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadedPlugins")
            .field("vendor", &self.vendor.name())
            .field("site", &self.site.name())
            .finish()
    }
}

impl PluginRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry with the bundled `mock` vendor and `reference-site` site.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register_vendor(crate::mock::PLUGIN_NAME, |cfg| {
            Arc::new(MockVendor::new(
                cfg.vendor_base_url.clone(),
                cfg.vendor_token.clone(),
            ))
        });
        reg.register_site(super::reference_site::PLUGIN_NAME, |cfg| {
            Arc::new(super::ReferenceSite::new(
                cfg.site_backend_url.clone(),
                cfg.site_backend_token.clone(),
                cfg.store_public_url.clone(),
            ))
        });
        reg
    }

    pub fn register_vendor<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&PluginConfig) -> Arc<dyn VendorPlugin> + Send + Sync + 'static,
    {
        self.vendors.insert(name.to_string(), Arc::new(factory));
    }

    pub fn register_site<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&PluginConfig) -> Arc<dyn SitePlugin> + Send + Sync + 'static,
    {
        self.sites.insert(name.to_string(), Arc::new(factory));
    }

    pub fn vendor_names(&self) -> impl Iterator<Item = &str> {
        self.vendors.keys().map(String::as_str)
    }

    pub fn site_names(&self) -> impl Iterator<Item = &str> {
        self.sites.keys().map(String::as_str)
    }

    pub fn load(&self, config: &PluginConfig) -> Result<LoadedPlugins, PluginError> {
        let vendor = self
            .vendors
            .get(&config.vendor_plugin_name)
            .ok_or_else(|| PluginError::UnknownPlugin(config.vendor_plugin_name.clone()))?;
        let site = self
            .sites
            .get(&config.site_plugin_name)
            .ok_or_else(|| PluginError::UnknownPlugin(config.site_plugin_name.clone()))?;
        Ok(LoadedPlugins {
            vendor: vendor(config),
            site: site(config),
        })
    }
}

#[cfg(test)]
mod tests {
    use url::Url;

    use super::*;

    fn config(vendor: &str, site: &str) -> PluginConfig {
        PluginConfig {
            vendor_plugin_name: vendor.into(),
            site_plugin_name: site.into(),
            vendor_base_url: Url::parse("http://127.0.0.1:1/").unwrap(),
            site_backend_url: Url::parse("http://127.0.0.1:2/").unwrap(),
            vendor_token: "svc".into(),
            site_backend_token: "backend".into(),
            store_public_url: Url::parse("https://store.example/").unwrap(),
        }
    }

    #[test]
    fn loads_builtin_pair() {
        let loaded = PluginRegistry::builtin()
            .load(&config("mock", "reference-site"))
            .unwrap();
        assert_eq!(loaded.vendor.name(), "mock");
        assert_eq!(loaded.site.name(), "reference-site");
        assert_eq!(
            loaded.site.result_url("J-42").as_str(),
            "https://store.example/jobs/J-42/"
        );
    }

    #[test]
    fn unregistered_vendor_fails() {
        let err = PluginRegistry::builtin()
            .load(&config("iqm", "reference-site"))
            .unwrap_err();
        assert_eq!(err, PluginError::UnknownPlugin("iqm".into()));
    }

    #[test]
    fn lookup_is_case_sensitive() {
        let reg = PluginRegistry::builtin();
        assert!(matches!(
            reg.load(&config("Mock", "reference-site")),
            Err(PluginError::UnknownPlugin(n)) if n == "Mock"
        ));
        assert!(matches!(
            reg.load(&config("mock", "Reference-Site")),
            Err(PluginError::UnknownPlugin(_))
        ));
    }
}
