//! Password login, access-token validation, refresh rotation and the
//! failure codes a client sees.
//!
//!     cargo run --example tokens_and_login

use std::sync::Arc;

use qpu_gatekeeper::authn::{Authn, CredentialSink};
use qpu_gatekeeper::clock::{parse_ts, ManualClock};

fn main() {
    let clock = ManualClock::new(parse_ts("2026-03-01T09:00:00Z").unwrap());
    let authn = Authn::new(b"example-signing-key", Arc::new(clock.clone()));
    authn
        .credentials()
        .upsert_user("usr-1", "alice", &["regular".to_string()], false, Some("s3cret"));

    println!("wrong password: {:?}", authn.login("alice", "guess").map(|_| ()));

    let pair = authn.login("alice", "s3cret").unwrap();
    println!("access token expires in {} s, at {}", pair.expires_in, pair.expires_at);

    let claims = authn.validate_access(&pair.access_token).unwrap();
    println!("sub={} roles={:?}", claims.sub, claims.roles);

    let header = format!("Bearer {}", pair.access_token);
    println!("bearer ok: {}", authn.validate_bearer(Some(&header)).is_ok());
    println!("no header: {:?}", authn.validate_bearer(None).map(|_| ()));

    // Sixteen minutes later the access token is stale; the refresh token is not.
    clock.advance_ms(16 * 60 * 1000);
    let stale = authn.validate_access(&pair.access_token).unwrap_err();
    println!("after 16 min: {}", stale.code());

    let rotated = authn.refresh(&pair.refresh_token).unwrap();
    println!("refreshed: {}", authn.validate_access(&rotated.access_token).is_ok());

    // A refresh token is single use.
    let reused = authn.refresh(&pair.refresh_token).unwrap_err();
    println!("reusing the old refresh token: {}", reused.code());

    let mut tampered = rotated.access_token.clone();
    tampered.pop();
    tampered.push('A');
    println!(
        "tampered signature: {}",
        authn.validate_access(&tampered).map(|_| "accepted").unwrap_or_else(|e| e.code())
    );
}
