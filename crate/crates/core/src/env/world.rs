//! The simulated phone: apps, screens, widgets and their transitions.
//!
//! Screens are not stored; they are rebuilt from the world state on every
//! render, so the layout a policy sees is always a pure function of state.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{Action, Point, SwipeDirection, SystemButton};
use crate::hashing::fnv1a;
use crate::observation::{Layer, Observation, PixelBox, WidgetKind, WidgetView};
use crate::trajectory::EnvStatus;
use crate::verify::Records;

pub const SCREEN_WIDTH: u32 = 1080;
pub const SCREEN_HEIGHT: u32 = 2400;
pub const FILES_PER_PAGE: usize = 4;
/// Lists without paging show at most this many entries.
const MAX_LIST_ROWS: usize = 7;
/// Dialog layer bounds; clicks outside it are swallowed while it is shown.
pub const DIALOG_BOX: PixelBox = PixelBox::new(140, 900, 940, 1460);

const CONTACTS: [(&str, &str); 5] = [
    ("Alice Chen", "555-0101"),
    ("Bob Stone", "555-0102"),
    ("Carol Diaz", "555-0103"),
    ("Dan Wu", "555-0104"),
    ("Eve Park", "555-0105"),
];
const THREADS: [(&str, &str); 2] = [("Alice Chen", "See you soon"), ("Dan Wu", "Thanks!")];
const FILES: [&str; 9] = [
    "report.pdf",
    "notes.txt",
    "photo.jpg",
    "budget.xlsx",
    "slides.pptx",
    "invoice.pdf",
    "music.mp3",
    "todo.md",
    "resume.docx",
];
const PRODUCTS: [(&str, &str); 5] = [
    ("Desk Lamp", "25"),
    ("Coffee Mug", "9"),
    ("Notebook", "4"),
    ("Headphones", "59"),
    ("Backpack", "45"),
];
const SETTINGS: [(&str, &str); 4] = [
    ("wifi", "on"),
    ("bluetooth", "off"),
    ("dark_mode", "off"),
    ("auto_brightness", "on"),
];
pub const ACCOUNT_USERNAME: &str = "jamie";
pub const ACCOUNT_PASSWORD: &str = "tulip-42";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenId {
    Launcher,
    ContactsList,
    ContactsNew,
    ContactsDetail,
    MessagingInbox,
    MessagingCompose,
    MessagingThread,
    FilesBrowser,
    FilesDetail,
    FilesNewFolder,
    ShopHome,
    ShopProduct,
    ShopCart,
    SettingsMain,
    SettingsDisplay,
    SettingsAccount,
}

impl ScreenId {
    pub fn as_str(self) -> &'static str {
        match self {
            ScreenId::Launcher => "launcher/home",
            ScreenId::ContactsList => "contacts/list",
            ScreenId::ContactsNew => "contacts/new",
            ScreenId::ContactsDetail => "contacts/detail",
            ScreenId::MessagingInbox => "messaging/inbox",
            ScreenId::MessagingCompose => "messaging/compose",
            ScreenId::MessagingThread => "messaging/thread",
            ScreenId::FilesBrowser => "files/browser",
            ScreenId::FilesDetail => "files/detail",
            ScreenId::FilesNewFolder => "files/new_folder",
            ScreenId::ShopHome => "shop/home",
            ScreenId::ShopProduct => "shop/product",
            ScreenId::ShopCart => "shop/cart",
            ScreenId::SettingsMain => "settings/main",
            ScreenId::SettingsDisplay => "settings/display",
            ScreenId::SettingsAccount => "settings/account",
        }
    }

    pub fn app(self) -> &'static str {
        self.as_str().split('/').next().expect("screen ids are app/screen")
    }

    /// Home screen of an app, `None` for unknown apps.
    pub fn app_home(app: &str) -> Option<ScreenId> {
        Some(match app {
            "launcher" => ScreenId::Launcher,
            "contacts" => ScreenId::ContactsList,
            "messaging" => ScreenId::MessagingInbox,
            "files" => ScreenId::FilesBrowser,
            "shop" => ScreenId::ShopHome,
            "settings" => ScreenId::SettingsMain,
            _ => return None,
        })
    }
}

pub const APPS: [&str; 6] = ["launcher", "contacts", "messaging", "files", "shop", "settings"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogKind {
    Permission,
    Popup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormAction {
    SaveContact,
    DeleteContact,
    SendMessage,
    SendReply,
    CreateFolder,
    DeleteFile,
    AddToCart,
    Checkout,
    SignIn,
    SignOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Effect {
    Open {
        screen: ScreenId,
        selected: Option<String>,
        prefill: BTreeMap<String, String>,
    },
    Focus(String),
    Toggle(String),
    Submit(FormAction),
    Dismiss,
    Inert,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widget {
    pub view: WidgetView,
    pub effect: Effect,
}

/// One entry of the navigation stack, owning its own form state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub screen: ScreenId,
    pub selected: Option<String>,
    pub fields: BTreeMap<String, String>,
    pub focus: Option<String>,
    pub page: usize,
}

impl Frame {
    fn new(screen: ScreenId, selected: Option<String>, prefill: BTreeMap<String, String>) -> Self {
        Self {
            screen,
            selected,
            fields: prefill,
            focus: None,
            page: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub nav_stack: Vec<Frame>,
    pub records: Records,
    pub pending_dialog: Option<DialogKind>,
    pub status_line: Option<String>,
    pub tick: u64,
    pub rng_seed: u64,
    pub interrupt_rate: f64,
}

/// The dialog (if any) that the seeded schedule raises at `tick`.
pub fn interrupt_at(seed: u64, tick: u64, rate: f64) -> Option<DialogKind> {
    if rate <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tick.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    if rng.random::<f64>() < rate {
        Some(if rng.random::<bool>() {
            DialogKind::Permission
        } else {
            DialogKind::Popup
        })
    } else {
        None
    }
}

/// The raw schedule for ticks `1..=n`, ignoring whether a dialog is already
/// pending.
pub fn interrupt_schedule(seed: u64, rate: f64, n: u64) -> Vec<Option<DialogKind>> {
    (1..=n).map(|t| interrupt_at(seed, t, rate)).collect()
}

fn row_box(i: usize) -> PixelBox {
    let y0 = 240 + 180 * i as u32;
    PixelBox::new(40, y0, 1040, y0 + 160)
}

fn bottom_box(i: usize) -> PixelBox {
    let x0 = 40 + 520 * i as u32;
    PixelBox::new(x0, 2200, x0 + 480, 2360)
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

struct Builder {
    widgets: Vec<Widget>,
    rows: usize,
    bottoms: usize,
}

impl Builder {
    fn new(title: &str) -> Self {
        let mut b = Self {
            widgets: Vec::new(),
            rows: 0,
            bottoms: 0,
        };
        b.push("title", WidgetKind::Label, PixelBox::new(40, 60, 1040, 200), title, "", Effect::Inert);
        b
    }

    fn push(&mut self, id: &str, kind: WidgetKind, bbox: PixelBox, label: &str, value: &str, effect: Effect) {
        self.widgets.push(Widget {
            view: WidgetView {
                id: id.to_string(),
                kind,
                bbox,
                label: label.to_string(),
                value: value.to_string(),
                focused: false,
                sensitive: false,
                layer: Layer::Main,
            },
            effect,
        });
    }

    fn row(&mut self, id: &str, kind: WidgetKind, label: &str, value: &str, effect: Effect) {
        let bbox = row_box(self.rows);
        self.rows += 1;
        self.push(id, kind, bbox, label, value, effect);
    }

    fn bottom(&mut self, id: &str, label: &str, effect: Effect) {
        let bbox = bottom_box(self.bottoms);
        self.bottoms += 1;
        self.push(id, WidgetKind::Button, bbox, label, "", effect);
    }

    fn field(&mut self, frame: &Frame, name: &str) {
        let value = frame.fields.get(name).cloned().unwrap_or_default();
        self.row(&format!("field_{name}"), WidgetKind::Textfield, name, &value, Effect::Focus(name.into()));
        let w = self.widgets.last_mut().expect("just pushed");
        w.view.focused = frame.focus.as_deref() == Some(name);
    }

    fn open(screen: ScreenId, selected: Option<&str>) -> Effect {
        Effect::Open {
            screen,
            selected: selected.map(str::to_string),
            prefill: BTreeMap::new(),
        }
    }
}

impl WorldState {
    /// Deterministic initial state for an app, seed and record overrides.
    pub fn initial(app: &str, seed: u64, interrupt_rate: f64, overrides: &Records) -> Option<Self> {
        let home = ScreenId::app_home(app)?;
        let mut records = Records::new();
        for (name, phone) in CONTACTS {
            records.insert(format!("contact:{name}:phone"), phone.into());
        }
        for (who, text) in THREADS {
            records.insert(format!("message:{who}"), text.into());
        }
        for f in FILES {
            records.insert(format!("file:{f}"), "file".into());
        }
        for (p, price) in PRODUCTS {
            records.insert(format!("product:{p}:price"), price.into());
        }
        for (k, v) in SETTINGS {
            records.insert(format!("setting:{k}"), v.into());
        }
        records.insert("account:username".into(), ACCOUNT_USERNAME.into());
        records.insert("account:password".into(), ACCOUNT_PASSWORD.into());
        for (k, v) in overrides {
            if v.is_empty() {
                records.remove(k);
            } else {
                records.insert(k.clone(), v.clone());
            }
        }
        let mut nav_stack = vec![Frame::new(ScreenId::Launcher, None, BTreeMap::new())];
        if home != ScreenId::Launcher {
            nav_stack.push(Frame::new(home, None, BTreeMap::new()));
        }
        Some(Self {
            nav_stack,
            records,
            pending_dialog: None,
            status_line: None,
            tick: 0,
            rng_seed: seed,
            interrupt_rate,
        })
    }

    pub fn frame(&self) -> &Frame {
        self.nav_stack.last().expect("navigation stack is never empty")
    }

    fn frame_mut(&mut self) -> &mut Frame {
        self.nav_stack.last_mut().expect("navigation stack is never empty")
    }

    pub fn screen(&self) -> ScreenId {
        self.frame().screen
    }

    pub fn app(&self) -> &'static str {
        self.screen().app()
    }

    /// Names stored under `prefix...suffix`, in the seed's display order.
    fn listed(&self, prefix: &str, suffix: &str) -> Vec<String> {
        let mut names: Vec<String> = self
            .records
            .keys()
            .filter_map(|k| k.strip_prefix(prefix)?.strip_suffix(suffix).map(str::to_string))
            .filter(|n| !n.is_empty() && !n.contains(':'))
            .collect();
        let seed = self.rng_seed;
        names.sort_by_key(|n| (fnv1a(format!("{seed}:{n}").as_bytes()), n.clone()));
        names
    }

    fn contacts(&self) -> Vec<String> {
        self.listed("contact:", ":phone")
    }

    fn files(&self) -> Vec<String> {
        self.listed("file:", "")
    }

    fn page_count(&self) -> usize {
        self.files().len().div_ceil(FILES_PER_PAGE).max(1)
    }

    fn setting(&self, key: &str) -> &str {
        self.records.get(key).map_or("off", String::as_str)
    }

    /// Main-layer widgets of the current screen.
    pub fn widgets(&self) -> Vec<Widget> {
        let f = self.frame();
        let sel = f.selected.as_deref().unwrap_or("");
        let mut b;
        match f.screen {
            ScreenId::Launcher => {
                b = Builder::new("Home");
                for (app, label) in [
                    ("contacts", "Contacts"),
                    ("messaging", "Messages"),
                    ("files", "Files"),
                    ("shop", "Shop"),
                    ("settings", "Settings"),
                ] {
                    let home = ScreenId::app_home(app).expect("known app");
                    b.row(&format!("app_{app}"), WidgetKind::Button, label, "", Builder::open(home, None));
                }
            }
            ScreenId::ContactsList => {
                b = Builder::new("Contacts");
                b.row("btn_new_contact", WidgetKind::Button, "New contact", "", Builder::open(ScreenId::ContactsNew, None));
                for name in self.contacts().into_iter().take(MAX_LIST_ROWS) {
                    b.row(
                        &format!("contact_{}", slug(&name)),
                        WidgetKind::ListItem,
                        &name,
                        "",
                        Builder::open(ScreenId::ContactsDetail, Some(&name)),
                    );
                }
            }
            ScreenId::ContactsNew => {
                b = Builder::new("New contact");
                for field in ["name", "phone", "email"] {
                    b.field(f, field);
                }
                b.bottom("btn_save", "Save", Effect::Submit(FormAction::SaveContact));
            }
            ScreenId::ContactsDetail => {
                b = Builder::new(sel);
                let phone = self.records.get(&format!("contact:{sel}:phone")).cloned().unwrap_or_default();
                b.row("phone", WidgetKind::Label, "phone", &phone, Effect::Inert);
                let fav = format!("favorite:{sel}");
                b.row("toggle_favorite", WidgetKind::Toggle, "Favorite", self.setting(&fav), Effect::Toggle(fav.clone()));
                let mut prefill = BTreeMap::new();
                prefill.insert("recipient".to_string(), sel.to_string());
                b.row(
                    "btn_message",
                    WidgetKind::Button,
                    "Message",
                    "",
                    Effect::Open {
                        screen: ScreenId::MessagingCompose,
                        selected: None,
                        prefill,
                    },
                );
                b.bottom("btn_delete", "Delete", Effect::Submit(FormAction::DeleteContact));
            }
            ScreenId::MessagingInbox => {
                b = Builder::new("Messages");
                b.row("btn_compose", WidgetKind::Button, "Compose", "", Builder::open(ScreenId::MessagingCompose, None));
                for who in self.listed("message:", "").into_iter().take(MAX_LIST_ROWS) {
                    let last = self.records[&format!("message:{who}")].clone();
                    b.row(
                        &format!("thread_{}", slug(&who)),
                        WidgetKind::ListItem,
                        &who,
                        &last,
                        Builder::open(ScreenId::MessagingThread, Some(&who)),
                    );
                }
            }
            ScreenId::MessagingCompose => {
                b = Builder::new("New message");
                b.field(f, "recipient");
                b.field(f, "message");
                b.bottom("btn_send", "Send", Effect::Submit(FormAction::SendMessage));
            }
            ScreenId::MessagingThread => {
                b = Builder::new(sel);
                let last = self.records.get(&format!("message:{sel}")).cloned().unwrap_or_default();
                b.row("last_message", WidgetKind::Label, "last", &last, Effect::Inert);
                b.field(f, "message");
                b.bottom("btn_send", "Send", Effect::Submit(FormAction::SendReply));
            }
            ScreenId::FilesBrowser => {
                let pages = self.page_count();
                let page = f.page.min(pages - 1);
                b = Builder::new(&format!("Files {}/{}", page + 1, pages));
                b.row("btn_new_folder", WidgetKind::Button, "New folder", "", Builder::open(ScreenId::FilesNewFolder, None));
                for name in self.files().into_iter().skip(page * FILES_PER_PAGE).take(FILES_PER_PAGE) {
                    let kind = self.records[&format!("file:{name}")].clone();
                    b.row(
                        &format!("file_{}", slug(&name)),
                        WidgetKind::ListItem,
                        &name,
                        &kind,
                        Builder::open(ScreenId::FilesDetail, Some(&name)),
                    );
                }
            }
            ScreenId::FilesDetail => {
                b = Builder::new(sel);
                let star = format!("star:{sel}");
                b.row("toggle_star", WidgetKind::Toggle, "Star", self.setting(&star), Effect::Toggle(star.clone()));
                b.bottom("btn_delete", "Delete", Effect::Submit(FormAction::DeleteFile));
            }
            ScreenId::FilesNewFolder => {
                b = Builder::new("New folder");
                b.field(f, "folder");
                b.bottom("btn_create", "Create", Effect::Submit(FormAction::CreateFolder));
            }
            ScreenId::ShopHome => {
                b = Builder::new("Shop");
                let in_cart: u32 = self.cart().iter().map(|(_, q)| q).sum();
                b.row("btn_cart", WidgetKind::Button, "Cart", &in_cart.to_string(), Builder::open(ScreenId::ShopCart, None));
                for p in self.listed("product:", ":price") {
                    let price = self.records[&format!("product:{p}:price")].clone();
                    b.row(
                        &format!("product_{}", slug(&p)),
                        WidgetKind::ListItem,
                        &p,
                        &price,
                        Builder::open(ScreenId::ShopProduct, Some(&p)),
                    );
                }
            }
            ScreenId::ShopProduct => {
                b = Builder::new(sel);
                let price = self.records.get(&format!("product:{sel}:price")).cloned().unwrap_or_default();
                b.row("price", WidgetKind::Label, "price", &price, Effect::Inert);
                b.row("btn_add", WidgetKind::Button, "Add to cart", "", Effect::Submit(FormAction::AddToCart));
            }
            ScreenId::ShopCart => {
                b = Builder::new("Cart");
                for (p, q) in self.cart().into_iter().take(MAX_LIST_ROWS) {
                    b.row(&format!("cart_{}", slug(&p)), WidgetKind::Label, &p, &q.to_string(), Effect::Inert);
                }
                b.bottom("btn_checkout", "Checkout", Effect::Submit(FormAction::Checkout));
            }
            ScreenId::SettingsMain => {
                b = Builder::new("Settings");
                for key in ["wifi", "bluetooth"] {
                    let rk = format!("setting:{key}");
                    b.row(&format!("toggle_{key}"), WidgetKind::Toggle, key, self.setting(&rk), Effect::Toggle(rk.clone()));
                }
                b.row("btn_display", WidgetKind::Button, "Display", "", Builder::open(ScreenId::SettingsDisplay, None));
                b.row("btn_account", WidgetKind::Button, "Account", "", Builder::open(ScreenId::SettingsAccount, None));
            }
            ScreenId::SettingsDisplay => {
                b = Builder::new("Display");
                for key in ["dark_mode", "auto_brightness"] {
                    let rk = format!("setting:{key}");
                    b.row(&format!("toggle_{key}"), WidgetKind::Toggle, key, self.setting(&rk), Effect::Toggle(rk.clone()));
                }
            }
            ScreenId::SettingsAccount => {
                b = Builder::new("Account");
                match self.records.get("account:session") {
                    Some(user) => {
                        b.row("session", WidgetKind::Label, "signed in as", user, Effect::Inert);
                        b.bottom("btn_sign_out", "Sign out", Effect::Submit(FormAction::SignOut));
                    }
                    None => {
                        b.field(f, "username");
                        b.field(f, "password");
                        let pw = b.widgets.last_mut().expect("password field");
                        pw.view.sensitive = true;
                        pw.view.value = "*".repeat(pw.view.value.chars().count());
                        b.bottom("btn_sign_in", "Sign in", Effect::Submit(FormAction::SignIn));
                    }
                }
            }
        }
        if let Some(msg) = &self.status_line {
            b.push("status", WidgetKind::Label, PixelBox::new(40, 2040, 1040, 2160), msg, "", Effect::Inert);
        }
        b.widgets
    }

    fn cart(&self) -> Vec<(String, u32)> {
        self.records
            .iter()
            .filter_map(|(k, v)| Some((k.strip_prefix("cart:")?.to_string(), v.parse().ok()?)))
            .collect()
    }

    /// Dialog-layer widgets, empty when no dialog is pending.
    pub fn dialog_widgets(&self) -> Vec<Widget> {
        let Some(kind) = self.pending_dialog else {
            return Vec::new();
        };
        let (title, a, b) = match kind {
            DialogKind::Permission => ("Allow access to your location?", "Allow", "Deny"),
            DialogKind::Popup => ("Enjoying the app? Rate us!", "Close", "Later"),
        };
        let mk = |id: &str, kind: WidgetKind, bbox: PixelBox, label: &str, effect: Effect| Widget {
            view: WidgetView {
                id: id.into(),
                kind,
                bbox,
                label: label.into(),
                value: String::new(),
                focused: false,
                sensitive: false,
                layer: Layer::Dialog,
            },
            effect,
        };
        vec![
            mk("dialog_title", WidgetKind::Dialog, PixelBox::new(140, 900, 940, 1320), title, Effect::Inert),
            mk("dialog_a", WidgetKind::Button, PixelBox::new(180, 1340, 520, 1460), a, Effect::Dismiss),
            mk("dialog_b", WidgetKind::Button, PixelBox::new(560, 1340, 900, 1460), b, Effect::Dismiss),
        ]
    }

    /// Ids of privacy-sensitive widgets on the current screen.
    pub fn sensitive_flags(&self) -> BTreeSet<String> {
        self.widgets()
            .into_iter()
            .filter(|w| w.view.sensitive)
            .map(|w| w.view.id)
            .collect()
    }

    pub fn render(&self) -> Observation {
        let mut layout: Vec<WidgetView> = self.widgets().into_iter().map(|w| w.view).collect();
        layout.extend(self.dialog_widgets().into_iter().map(|w| w.view));
        Observation::render(SCREEN_WIDTH, SCREEN_HEIGHT, self.screen().as_str(), layout)
    }

    /// Topmost widget containing `p`. While a dialog is up, only the dialog
    /// layer is hit-testable.
    pub fn hit_test(&self, p: Point) -> Option<Widget> {
        if self.pending_dialog.is_some() {
            return self.dialog_widgets().into_iter().find(|w| w.view.bbox.contains(p));
        }
        self.widgets().into_iter().find(|w| w.view.bbox.contains(p))
    }

    /// Applies a UI action. Non-UI kinds (`ask_user`, `mcp_call`, `answer`,
    /// `terminate`) are the caller's business and are no-ops here.
    pub fn apply(&mut self, action: &Action) -> EnvStatus {
        if !action.within_bounds(SCREEN_WIDTH, SCREEN_HEIGHT) {
            return EnvStatus::ActionFailed;
        }
        let status = if self.pending_dialog.is_some() {
            self.apply_modal(action)
        } else {
            self.apply_main(action)
        };
        self.advance_tick();
        status
    }

    fn advance_tick(&mut self) {
        self.tick += 1;
        if self.pending_dialog.is_none() {
            self.pending_dialog = interrupt_at(self.rng_seed, self.tick, self.interrupt_rate);
        }
    }

    fn apply_modal(&mut self, action: &Action) -> EnvStatus {
        match action {
            Action::Click { point } | Action::LongPress { point } => {
                if let Some(w) = self.hit_test(*point) {
                    if w.effect == Effect::Dismiss {
                        self.pending_dialog = None;
                    }
                }
                EnvStatus::Ok
            }
            Action::SystemButton {
                button: SystemButton::Back,
            } => {
                self.pending_dialog = None;
                EnvStatus::Ok
            }
            _ => EnvStatus::Ok,
        }
    }

    fn apply_main(&mut self, action: &Action) -> EnvStatus {
        match action {
            Action::Click { point } | Action::LongPress { point } => match self.hit_test(*point) {
                Some(w) => self.fire(w.effect),
                None => EnvStatus::Ok,
            },
            Action::Type { text } => {
                let frame = self.frame_mut();
                match frame.focus.clone() {
                    Some(field) => {
                        frame.fields.insert(field, text.clone());
                        EnvStatus::Ok
                    }
                    None => EnvStatus::ActionFailed,
                }
            }
            Action::Swipe { direction, .. } => {
                if self.screen() == ScreenId::FilesBrowser {
                    let pages = self.page_count();
                    let frame = self.frame_mut();
                    match direction {
                        SwipeDirection::Up => frame.page = (frame.page + 1).min(pages - 1),
                        SwipeDirection::Down => frame.page = frame.page.saturating_sub(1),
                        _ => {}
                    }
                }
                EnvStatus::Ok
            }
            Action::SystemButton { button } => {
                match button {
                    SystemButton::Back => self.back(),
                    SystemButton::Home => {
                        self.nav_stack.truncate(1);
                        self.status_line = None;
                    }
                    SystemButton::Menu | SystemButton::Enter => {}
                }
                EnvStatus::Ok
            }
            Action::Drag { .. } | Action::Wait => EnvStatus::Ok,
            Action::Terminate { .. } | Action::Answer { .. } | Action::AskUser { .. } | Action::McpCall { .. } => {
                EnvStatus::Ok
            }
        }
    }

    fn back(&mut self) {
        if self.nav_stack.len() > 1 {
            self.nav_stack.pop();
        }
        self.status_line = None;
    }

    fn fire(&mut self, effect: Effect) -> EnvStatus {
        match effect {
            Effect::Open {
                screen,
                selected,
                prefill,
            } => {
                self.nav_stack.push(Frame::new(screen, selected, prefill));
                self.status_line = None;
            }
            Effect::Focus(field) => self.frame_mut().focus = Some(field),
            Effect::Toggle(key) => {
                let next = if self.setting(&key) == "on" { "off" } else { "on" };
                self.records.insert(key, next.into());
            }
            Effect::Submit(form) => self.submit(form),
            Effect::Dismiss => self.pending_dialog = None,
            Effect::Inert => {}
        }
        EnvStatus::Ok
    }

    fn field(&self, name: &str) -> String {
        self.frame().fields.get(name).map(|s| s.trim().to_string()).unwrap_or_default()
    }

    fn submit(&mut self, form: FormAction) {
        let sel = self.frame().selected.clone().unwrap_or_default();
        match form {
            FormAction::SaveContact => {
                let (name, phone, email) = (self.field("name"), self.field("phone"), self.field("email"));
                if name.is_empty() || phone.is_empty() {
                    self.status_line = Some("Name and phone are required".into());
                    return;
                }
                self.records.insert(format!("contact:{name}:phone"), phone);
                if !email.is_empty() {
                    self.records.insert(format!("contact:{name}:email"), email);
                }
                self.back();
            }
            FormAction::DeleteContact => {
                let prefix = format!("contact:{sel}:");
                self.records.retain(|k, _| !k.starts_with(&prefix));
                self.records.remove(&format!("favorite:{sel}"));
                self.back();
            }
            FormAction::SendMessage | FormAction::SendReply => {
                let to = if form == FormAction::SendMessage {
                    self.field("recipient")
                } else {
                    sel
                };
                let body = self.field("message");
                if to.is_empty() || body.is_empty() {
                    self.status_line = Some("Recipient and message are required".into());
                    return;
                }
                self.records.insert(format!("message:{to}"), body);
                if form == FormAction::SendMessage {
                    self.back();
                } else {
                    self.frame_mut().fields.clear();
                    self.status_line = Some("Sent".into());
                }
            }
            FormAction::CreateFolder => {
                let name = self.field("folder");
                if name.is_empty() {
                    self.status_line = Some("Folder name is required".into());
                    return;
                }
                self.records.insert(format!("file:{name}"), "folder".into());
                self.back();
            }
            FormAction::DeleteFile => {
                self.records.remove(&format!("file:{sel}"));
                self.records.remove(&format!("star:{sel}"));
                self.back();
            }
            FormAction::AddToCart => {
                let key = format!("cart:{sel}");
                let q: u32 = self.records.get(&key).and_then(|v| v.parse().ok()).unwrap_or(0);
                self.records.insert(key, (q + 1).to_string());
                self.status_line = Some("Added to cart".into());
            }
            FormAction::Checkout => {
                let cart = self.cart();
                if cart.is_empty() {
                    self.status_line = Some("Cart is empty".into());
                    return;
                }
                let n = self.records.keys().filter(|k| k.starts_with("order:")).count() + 1;
                let summary = cart.iter().map(|(p, q)| format!("{p} x{q}")).collect::<Vec<_>>().join(", ");
                self.records.insert(format!("order:{n}"), summary);
                self.records.retain(|k, _| !k.starts_with("cart:"));
                self.status_line = Some(format!("Order {n} placed"));
            }
            FormAction::SignIn => {
                let (user, pw) = (self.field("username"), self.field("password"));
                let ok = self.records.get("account:username") == Some(&user)
                    && self.records.get("account:password") == Some(&pw);
                if ok {
                    self.records.insert("account:session".into(), user);
                    self.frame_mut().fields.clear();
                    self.frame_mut().focus = None;
                    self.status_line = Some("Signed in".into());
                } else {
                    self.status_line = Some("Sign in failed".into());
                }
            }
            FormAction::SignOut => {
                self.records.remove("account:session");
                self.status_line = Some("Signed out".into());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(app: &str) -> WorldState {
        WorldState::initial(app, 7, 0.0, &Records::new()).unwrap()
    }

    fn click_id(w: &mut WorldState, id: &str) -> EnvStatus {
        let c = w
            .widgets()
            .into_iter()
            .chain(w.dialog_widgets())
            .find(|x| x.view.id == id)
            .unwrap_or_else(|| panic!("no widget {id}"))
            .view
            .bbox
            .center();
        w.apply(&Action::click(c.x, c.y))
    }

    #[test]
    fn layouts_stay_in_bounds_without_overlap() {
        for app in APPS {
            let mut w = world(app);
            for _ in 0..3 {
                let ws = w.widgets();
                for (i, a) in ws.iter().enumerate() {
                    assert!(a.view.bbox.x1 <= SCREEN_WIDTH && a.view.bbox.y1 <= SCREEN_HEIGHT);
                    for b in &ws[i + 1..] {
                        assert!(!a.view.bbox.overlaps(&b.view.bbox), "{} overlaps {}", a.view.id, b.view.id);
                    }
                }
                let clickable: Vec<_> = ws.iter().filter(|x| x.effect != Effect::Inert).collect();
                assert!(clickable.len() <= 8);
                if let Some(first) = clickable.first() {
                    let id = first.view.id.clone();
                    click_id(&mut w, &id);
                }
            }
        }
    }

    #[test]
    fn create_contact_flow() {
        let mut w = world("contacts");
        click_id(&mut w, "btn_new_contact");
        click_id(&mut w, "field_name");
        assert_eq!(w.apply(&Action::type_text("Zed")), EnvStatus::Ok);
        click_id(&mut w, "field_phone");
        w.apply(&Action::type_text("1"));
        click_id(&mut w, "btn_save");
        assert_eq!(w.records["contact:Zed:phone"], "1");
        assert_eq!(w.screen(), ScreenId::ContactsList);
    }

    #[test]
    fn typing_without_focus_fails() {
        let mut w = world("contacts");
        assert_eq!(w.apply(&Action::type_text("x")), EnvStatus::ActionFailed);
        assert_eq!(w.apply(&Action::click(5000, 1)), EnvStatus::ActionFailed);
    }

    #[test]
    fn dialog_swallows_outside_clicks_and_back_restores() {
        let mut w = world("settings");
        let before = w.render();
        w.pending_dialog = Some(DialogKind::Popup);
        let with_dialog = w.render();
        assert_ne!(before.hash(), with_dialog.hash());
        // wifi toggle sits outside the dialog box
        let wifi = w.widgets().into_iter().find(|x| x.view.id == "toggle_wifi").unwrap().view.bbox.center();
        assert!(!DIALOG_BOX.contains(wifi));
        w.apply(&Action::click(wifi.x, wifi.y));
        assert_eq!(w.records["setting:wifi"], "on");
        assert_eq!(w.render().hash(), with_dialog.hash());
        w.apply(&Action::back());
        assert_eq!(w.render().hash(), before.hash());
    }

    #[test]
    fn password_is_masked_and_flagged() {
        let mut w = world("settings");
        click_id(&mut w, "btn_account");
        click_id(&mut w, "field_password");
        w.apply(&Action::type_text(ACCOUNT_PASSWORD));
        let obs = w.render();
        let pw = obs.layout.iter().find(|x| x.id == "field_password").unwrap();
        assert!(pw.sensitive);
        assert!(!serde_json::to_string(&obs).unwrap().contains(ACCOUNT_PASSWORD));
        assert!(w.sensitive_flags().contains("field_password"));
    }

    #[test]
    fn schedule_is_seeded() {
        let a = interrupt_schedule(42, 0.3, 200);
        assert_eq!(a, interrupt_schedule(42, 0.3, 200));
        let hits = a.iter().filter(|d| d.is_some()).count();
        assert!((30..=90).contains(&hits), "{hits}");
        assert!(interrupt_schedule(42, 0.0, 50).iter().all(Option::is_none));
    }
}
