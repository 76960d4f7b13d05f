//! Turning command-line flags into `AppData`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use peershare_core::fixtures;
use peershare_core::model::{
    AppData, AppIdentity, BindingType, DataDescriptor, Sensitivity, SharingPolicy, SocialIdentity, Specificity,
};

use crate::args::{BindingArg, DataArgs, SensitivityArg, SpecificityArg};
use crate::error::CliError;

pub fn parse_policy(text: &str) -> Result<SharingPolicy, CliError> {
    match text {
        "all_friends" | "all-friends" => Ok(SharingPolicy::AllFriends),
        _ => match text.split_once(':') {
            Some(("list", id)) if !id.is_empty() => Ok(SharingPolicy::named(id)),
            _ => Err(CliError::Usage(format!(
                "policy must be all_friends or list:<id>, got {text:?}"
            ))),
        },
    }
}

pub fn parse_app(text: &str) -> Result<AppIdentity, CliError> {
    text.parse()
        .map_err(|e: peershare_core::model::ParseAppIdentityError| CliError::Usage(e.to_string()))
}

fn parse_value(args: &DataArgs) -> Result<Option<Vec<u8>>, CliError> {
    if let Some(text) = &args.value {
        return Ok(Some(text.as_bytes().to_vec()));
    }
    if let Some(h) = &args.value_hex {
        return hex::decode(h)
            .map(Some)
            .map_err(|e| CliError::Usage(format!("--value-hex: {e}")));
    }
    if let Some(b) = &args.value_b64 {
        return STANDARD
            .decode(b)
            .map(Some)
            .map_err(|e| CliError::Usage(format!("--value-b64: {e}")));
    }
    Ok(None)
}

fn parse_owner(text: &str) -> Result<SocialIdentity, CliError> {
    match text.split_once(':') {
        Some((network, id)) if !network.is_empty() && !id.is_empty() => Ok(SocialIdentity::new(network, id, id)),
        _ => Err(CliError::Usage(format!(
            "--owner must be network:social_id, got {text:?}"
        ))),
    }
}

/// Overwrites fields of `data` that were given on the command line.
fn apply(data: &mut AppData, args: &DataArgs) -> Result<(), CliError> {
    if let Some(t) = &args.data_type {
        data.data_type = t.clone();
    }
    if let Some(v) = parse_value(args)? {
        data.data_value = v;
    }
    let d = &mut data.descriptor;
    if let Some(a) = &args.algorithm {
        d.data_algorithm = a.clone();
    }
    if let Some(s) = args.specificity {
        d.specificity = match s {
            SpecificityArg::Device => Specificity::Device,
            SpecificityArg::User => Specificity::User,
        };
    }
    if let Some(s) = args.sensitivity {
        d.sensitivity = match s {
            SensitivityArg::Public => Sensitivity::Public,
            SensitivityArg::Private => Sensitivity::Private,
        };
    }
    if let Some(b) = args.binding {
        d.binding_type = match b {
            BindingArg::Owner => BindingType::OwnerAsserted,
            BindingArg::User => BindingType::UserAsserted,
        };
    }
    if let Some(text) = &args.description {
        d.description = text.clone();
    }
    if let Some(p) = &args.policy {
        data.sharing_policy = Some(parse_policy(p)?);
    }
    if let Some(e) = args.expires_at {
        data.expires_at = e;
    }
    if let Some(dev) = &args.device_id {
        data.device_id = dev.clone();
    }
    if let Some(o) = &args.owner {
        data.owner = parse_owner(o)?;
    }
    Ok(())
}

/// A new item. Built-in types start from their template; anything else
/// needs every descriptor field spelled out.
pub fn build(args: &DataArgs) -> Result<AppData, CliError> {
    let data_type = args
        .data_type
        .clone()
        .ok_or_else(|| CliError::Usage("--type is required".into()))?;
    let mut data = match fixtures::builtin(&data_type) {
        Some(mut template) => {
            template.created_at = 0;
            template
        }
        None => {
            let missing = [
                ("--algorithm", args.algorithm.is_none()),
                ("--specificity", args.specificity.is_none()),
                ("--sensitivity", args.sensitivity.is_none()),
            ];
            if let Some((flag, _)) = missing.iter().find(|(_, m)| *m) {
                return Err(CliError::Usage(format!(
                    "{flag} is required for custom type {data_type:?}"
                )));
            }
            AppData {
                data_type: data_type.clone(),
                data_value: Vec::new(),
                descriptor: DataDescriptor {
                    data_algorithm: String::new(),
                    specificity: Specificity::User,
                    sensitivity: Sensitivity::Private,
                    binding_type: BindingType::OwnerAsserted,
                    description: String::new(),
                },
                sharing_policy: None,
                created_at: 0,
                expires_at: 0,
                owner: SocialIdentity::new("", "", ""),
                creator: AppIdentity::new("", ""),
                device_id: String::new(),
            }
        }
    };
    if parse_value(args)?.is_none() {
        return Err(CliError::Usage(
            "one of --value, --value-hex, --value-b64 is required".into(),
        ));
    }
    apply(&mut data, args)?;
    Ok(data)
}

/// `current` with the given flags applied on top.
pub fn amend(mut current: AppData, args: &DataArgs) -> Result<AppData, CliError> {
    apply(&mut current, args)?;
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> DataArgs {
        DataArgs {
            data_type: None,
            value: None,
            value_hex: None,
            value_b64: None,
            algorithm: None,
            specificity: None,
            sensitivity: None,
            binding: None,
            description: None,
            policy: None,
            expires_at: None,
            device_id: None,
            owner: None,
        }
    }

    #[test]
    fn builtin_types_need_only_a_value() {
        let mut a = args();
        a.data_type = Some(fixtures::BDADDR_BINDING.into());
        a.value_hex = Some("001a7dda7113".into());
        let d = build(&a).unwrap();
        assert_eq!(d.data_value, vec![0x00, 0x1a, 0x7d, 0xda, 0x71, 0x13]);
        assert_eq!(d.descriptor.specificity, Specificity::Device);
        assert_eq!(d.created_at, 0);
        assert_eq!(d.sharing_policy, None);
    }

    #[test]
    fn custom_types_need_a_descriptor() {
        let mut a = args();
        a.data_type = Some("x-note".into());
        a.value = Some("hi".into());
        assert!(matches!(build(&a), Err(CliError::Usage(_))));
        a.algorithm = Some("PLAIN".into());
        a.specificity = Some(SpecificityArg::User);
        a.sensitivity = Some(SensitivityArg::Public);
        a.policy = Some("list:l-3".into());
        let d = build(&a).unwrap();
        assert_eq!(d.sharing_policy, Some(SharingPolicy::named("l-3")));
    }

    #[test]
    fn policies_parse() {
        assert_eq!(parse_policy("all_friends").unwrap(), SharingPolicy::AllFriends);
        assert_eq!(parse_policy("list:l-1").unwrap(), SharingPolicy::named("l-1"));
        assert!(parse_policy("list:").is_err());
        assert!(parse_policy("everyone").is_err());
    }
}
