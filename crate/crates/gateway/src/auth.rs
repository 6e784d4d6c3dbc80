//! Accounts, password hashing and signed bearer tokens.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use argon2::password_hash::rand_core::OsRng;
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use axum::extract::FromRequestParts;
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use jsonwebtoken::{decode, encode, Algorithm, DecodingKey, EncodingKey, Header, Validation};
use parking_lot::RwLock;
use reconlab_core::clock::Clock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ApiError;
use crate::state::AppState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Developer,
    Reader,
    Admin,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Developer => "developer",
            Role::Reader => "reader",
            Role::Admin => "admin",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = AuthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "developer" => Ok(Role::Developer),
            "reader" => Ok(Role::Reader),
            "admin" => Ok(Role::Admin),
            other => Err(AuthError::UnknownRole(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("invalid username or password")]
    BadCredentials,
    #[error("username `{0}` is taken")]
    UsernameTaken(String),
    #[error("username must be 1-64 characters of [A-Za-z0-9_.-]")]
    InvalidUsername,
    #[error("password must be at least 8 characters")]
    WeakPassword,
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("role `{0}` cannot be self-registered")]
    RoleNotAllowed(Role),
    #[error("missing bearer token")]
    MissingToken,
    #[error("invalid token")]
    InvalidToken,
    #[error("token expired")]
    Expired,
    #[error("credential hashing failed: {0}")]
    Hash(String),
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::BadCredentials => "bad_credentials",
            AuthError::UsernameTaken(_) => "username_taken",
            AuthError::InvalidUsername => "invalid_username",
            AuthError::WeakPassword => "weak_password",
            AuthError::UnknownRole(_) => "unknown_role",
            AuthError::RoleNotAllowed(_) => "role_not_allowed",
            AuthError::MissingToken => "missing_token",
            AuthError::InvalidToken => "invalid_token",
            AuthError::Expired => "token_expired",
            AuthError::Hash(_) => "internal",
        }
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        use axum::http::StatusCode;
        let status = match e {
            AuthError::BadCredentials
            | AuthError::MissingToken
            | AuthError::InvalidToken
            | AuthError::Expired => StatusCode::UNAUTHORIZED,
            AuthError::UsernameTaken(_) => StatusCode::CONFLICT,
            AuthError::RoleNotAllowed(_) => StatusCode::FORBIDDEN,
            AuthError::Hash(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub username: String,
    /// PHC string; embeds the algorithm, parameters and per-user salt.
    pub credential: String,
    pub role: Role,
    pub email: Option<String>,
}

pub fn hash_password(password: &str) -> Result<String, AuthError> {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| AuthError::Hash(e.to_string()))
}

pub fn verify_password(password: &str, credential: &str) -> bool {
    PasswordHash::new(credential)
        .map(|parsed| {
            Argon2::default()
                .verify_password(password.as_bytes(), &parsed)
                .is_ok()
        })
        .unwrap_or(false)
}

fn valid_username(name: &str) -> bool {
    (1..=64).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

pub struct UserStore {
    users: RwLock<HashMap<String, UserRecord>>,
    /// Verified against when the username is unknown, so both failure paths
    /// cost one hash verification.
    decoy: String,
}

impl Default for UserStore {
    fn default() -> Self {
        Self {
            users: RwLock::new(HashMap::new()),
            decoy: hash_password("decoy-password").expect("hashing a constant"),
        }
    }
}

impl UserStore {
    pub fn register(
        &self,
        username: &str,
        password: &str,
        role: Role,
        email: Option<String>,
    ) -> Result<UserRecord, AuthError> {
        if !valid_username(username) {
            return Err(AuthError::InvalidUsername);
        }
        if password.chars().count() < 8 {
            return Err(AuthError::WeakPassword);
        }
        let record = UserRecord {
            username: username.to_string(),
            credential: hash_password(password)?,
            role,
            email,
        };
        let mut users = self.users.write();
        if users.contains_key(username) {
            return Err(AuthError::UsernameTaken(username.to_string()));
        }
        users.insert(username.to_string(), record.clone());
        Ok(record)
    }

    pub fn authenticate(&self, username: &str, password: &str) -> Result<UserRecord, AuthError> {
        let found = self.users.read().get(username).cloned();
        match found {
            Some(user) if verify_password(password, &user.credential) => Ok(user),
            Some(_) => Err(AuthError::BadCredentials),
            None => {
                let _ = verify_password(password, &self.decoy);
                Err(AuthError::BadCredentials)
            }
        }
    }

    pub fn get(&self, username: &str) -> Option<UserRecord> {
        self.users.read().get(username).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub sub: String,
    pub role: Role,
    pub iat: u64,
    pub exp: u64,
    pub jti: String,
}

/// HS256 tokens checked against an injected clock.
pub struct TokenService {
    encoding: EncodingKey,
    decoding: DecodingKey,
    ttl: Duration,
    clock: Arc<dyn Clock>,
}

impl TokenService {
    pub fn new(secret: &[u8], ttl: Duration, clock: Arc<dyn Clock>) -> Self {
        Self {
            encoding: EncodingKey::from_secret(secret),
            decoding: DecodingKey::from_secret(secret),
            ttl,
            clock,
        }
    }

    pub fn issue(&self, user: &UserRecord) -> Result<(String, Claims), AuthError> {
        let now = self.clock.now();
        let claims = Claims {
            sub: user.username.clone(),
            role: user.role,
            iat: now.secs(),
            exp: now.plus(self.ttl).secs(),
            jti: uuid::Uuid::new_v4().to_string(),
        };
        let token = encode(&Header::new(Algorithm::HS256), &claims, &self.encoding)
            .map_err(|e| AuthError::Hash(e.to_string()))?;
        Ok((token, claims))
    }

    pub fn verify(&self, token: &str) -> Result<Claims, AuthError> {
        let mut validation = Validation::new(Algorithm::HS256);
        // expiry is checked below against the service clock
        validation.validate_exp = false;
        let data =
            decode::<Claims>(token, &self.decoding, &validation).map_err(|_| AuthError::InvalidToken)?;
        if self.clock.now().secs() >= data.claims.exp {
            return Err(AuthError::Expired);
        }
        Ok(data.claims)
    }
}

/// The authenticated caller, extracted from `Authorization: Bearer <token>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthUser {
    pub username: String,
    pub role: Role,
}

impl AuthUser {
    pub fn require(&self, allowed: &[Role]) -> Result<(), ApiError> {
        if self.role == Role::Admin || allowed.contains(&self.role) {
            Ok(())
        } else {
            Err(ApiError::forbidden(format!(
                "role `{}` may not perform this action",
                self.role
            )))
        }
    }

    pub fn is_reader(&self) -> bool {
        self.role == Role::Reader
    }
}

impl FromRequestParts<AppState> for AuthUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .ok_or(AuthError::MissingToken)?;
        let token = header.strip_prefix("Bearer ").ok_or(AuthError::MissingToken)?;
        let claims = state.tokens.verify(token.trim())?;
        Ok(AuthUser {
            username: claims.sub,
            role: claims.role,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use base64::engine::general_purpose::URL_SAFE_NO_PAD;
    use base64::Engine;
    use rand::{Rng, SeedableRng};
    use reconlab_core::clock::{ManualClock, Timestamp};

    fn service(clock: Arc<ManualClock>) -> TokenService {
        TokenService::new(
            b"0123456789abcdef0123456789abcdef",
            Duration::from_secs(3600),
            clock,
        )
    }

    fn user() -> UserRecord {
        UserRecord {
            username: "researcher1".into(),
            credential: String::new(),
            role: Role::Developer,
            email: None,
        }
    }

    #[test]
    fn issue_verify_expire() {
        let clock = Arc::new(ManualClock::new(Timestamp(1_000)));
        let svc = service(clock.clone());
        let (token, claims) = svc.issue(&user()).unwrap();
        assert_eq!(svc.verify(&token).unwrap(), claims);
        assert_eq!(claims.exp - claims.iat, 3600);
        clock.advance(Duration::from_secs(3599));
        assert!(svc.verify(&token).is_ok());
        clock.advance(Duration::from_secs(1));
        assert_eq!(svc.verify(&token), Err(AuthError::Expired));
        let other = TokenService::new(b"another-secret-another-secret!!", Duration::from_secs(60), clock);
        assert_eq!(other.verify(&token), Err(AuthError::InvalidToken));
    }

    #[test]
    fn any_bit_flip_is_rejected() {
        let svc = service(Arc::new(ManualClock::new(Timestamp(0))));
        let (token, _) = svc.issue(&user()).unwrap();
        let parts: Vec<&str> = token.split('.').collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for i in 0..100 {
            // alternate between the claims and the signature segment
            let seg = if i % 2 == 0 { 1 } else { 2 };
            let mut raw = URL_SAFE_NO_PAD.decode(parts[seg]).unwrap();
            let bit = rng.random_range(0..raw.len() * 8);
            raw[bit / 8] ^= 1 << (bit % 8);
            let mut forged: Vec<String> = parts.iter().map(|s| s.to_string()).collect();
            forged[seg] = URL_SAFE_NO_PAD.encode(&raw);
            assert!(
                svc.verify(&forged.join(".")).is_err(),
                "flip {bit} in segment {seg}"
            );
        }
    }

    #[test]
    fn passwords_are_salted() {
        let store = UserStore::default();
        let a = store
            .register("alice", "correct horse", Role::Reader, None)
            .unwrap();
        let b = store
            .register("bob", "correct horse", Role::Reader, None)
            .unwrap();
        assert_ne!(a.credential, b.credential);
        assert!(!a.credential.contains("correct horse"));
        assert!(store.authenticate("alice", "correct horse").is_ok());
        assert_eq!(
            store.authenticate("alice", "wrong pass"),
            Err(AuthError::BadCredentials)
        );
        assert_eq!(
            store.authenticate("nobody", "correct horse"),
            Err(AuthError::BadCredentials)
        );
        assert_eq!(
            store.register("alice", "another one", Role::Reader, None),
            Err(AuthError::UsernameTaken("alice".into()))
        );
        assert_eq!(
            store.register("bad name", "long enough", Role::Reader, None),
            Err(AuthError::InvalidUsername)
        );
        assert_eq!(
            store.register("carol", "short", Role::Reader, None),
            Err(AuthError::WeakPassword)
        );
    }
}
