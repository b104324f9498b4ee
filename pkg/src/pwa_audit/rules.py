"""Shipped rule table.

Each rule carries its default severity, CIA dimensions, lifecycle phase,
the catalog risk row it instantiates (when there is one) and a fixed
remediation text.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional


class Severity(str, enum.Enum):
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"

    @property
    def rank(self) -> int:
        return _RANK[self]


_RANK = {Severity.INFO: 0, Severity.WARNING: 1, Severity.ERROR: 2}


class Phase(str, enum.Enum):
    PRE_INSTALLATION = "pre_installation"
    INSTALLATION = "installation"
    POST_INSTALLATION = "post_installation"
    UNINSTALLATION = "uninstallation"


@dataclass(frozen=True)
class Rule:
    rule_id: str
    severity: Severity
    cia: frozenset
    phase: Phase
    summary: str
    remediation: str
    catalog_risk: Optional[str] = None


_E, _W, _I = Severity.ERROR, Severity.WARNING, Severity.INFO
_PRE, _POST = Phase.PRE_INSTALLATION, Phase.POST_INSTALLATION

RISK_REQUIREMENTS = "Discrepancies in PWA installation requirements"
RISK_NAME_ICON_DUP = "Name and icon duplication causing user confusion and phishing"
RISK_ID = "ID can be duplicated and multiple PWAs not distinguishable"
RISK_EXTERNAL = "start_url and scope leading to external sites"
RISK_ICON_3P = "Icon can be a third-party URL, leading to phishing"
RISK_FULLSCREEN = "Display fullscreen mode hides URLs, enabling phishing attacks"
RISK_RELATED = "Related applications can lead to third-party app installations"
RISK_ARBITRARY = "Manifest allows arbitrary fields, leading to tracking"
RISK_CACHE_ONLY = "Service worker cache-only strategies prevent updates"


def _r(rule_id, sev, cia, phase, summary, remediation, risk=None) -> Rule:
    return Rule(rule_id, sev, frozenset(cia), phase, summary, remediation, risk)


RULES: dict[str, Rule] = {r.rule_id: r for r in (
    _r("SYN-JSON-MALFORMED", _E, "A", _PRE,
       "Manifest is not a JSON object",
       "Serve a UTF-8 JSON object; browsers ignore unparsable manifests and the app cannot be installed."),
    _r("SYN-SU-EMPTY", _E, "A", _PRE,
       "start_url is empty",
       "Set start_url to a same-origin path such as \"/\" or remove the field."),
    _r("SYN-SC-EMPTY", _E, "A", _PRE,
       "scope is empty",
       "Set scope to a same-origin directory ending in \"/\" or remove the field."),
    _r("SYN-DISPLAY-UNKNOWN", _E, "A", _PRE,
       "display is not a documented value",
       "Use one of fullscreen, standalone, minimal-ui or browser; installable apps need one of the first three."),
    _r("SEC-SU-TRACK", _W, "I", _PRE,
       "start_url carries query parameters",
       "Drop per-user query parameters from start_url; use analytics that do not personalize the launch URL.",
       RISK_EXTERNAL),
    _r("SEC-SU-XORIGIN", _E, "I", _PRE,
       "start_url is not same-origin with the document",
       "Use a relative or same-origin start_url; browsers discard cross-origin values and launch the current page.",
       RISK_EXTERNAL),
    _r("SEC-SU-PARENT", _W, "I", _PRE,
       "start_url climbs to a parent path",
       "Point start_url at a path inside the app directory instead of using ../ segments.",
       RISK_EXTERNAL),
    _r("SEC-SU-REDIRECT-PARAM", _W, "I", _PRE,
       "start_url carries a redirect-style parameter",
       "Remove redirect targets from start_url; launching must not forward users to another site.",
       RISK_EXTERNAL),
    _r("SEC-SC-PARENT", _W, "I", _PRE,
       "scope climbs to a parent path",
       "Declare scope as the app's own directory instead of using ../ segments.",
       RISK_EXTERNAL),
    _r("SEC-SC-XORIGIN", _E, "I", _PRE,
       "scope is not same-origin with the document",
       "Use a same-origin scope; cross-origin scopes are discarded.",
       RISK_EXTERNAL),
    _r("SEC-SC-NO-TRAILING-SLASH", _I, "I", _PRE,
       "scope does not end with \"/\"",
       "End scope with \"/\"; scope matching is a plain prefix, so /app also covers /approot.",
       RISK_EXTERNAL),
    _r("SEC-NAME-EMPTY", _W, "C", _PRE,
       "name is missing or empty",
       "Give the app a distinctive name; browsers otherwise substitute a generic label or the URL.",
       RISK_NAME_ICON_DUP),
    _r("SEC-NAME-LONG", _W, "I", _PRE,
       "name is longer than 1000 characters",
       "Shorten the name; desktop browsers refuse to install such apps while mobile browsers accept them.",
       RISK_REQUIREMENTS),
    _r("SEC-NAME-DUP", _W, "C", _PRE,
       "name is already used by other apps",
       "Choose a name not used by other apps to avoid look-alike confusion.",
       RISK_NAME_ICON_DUP),
    _r("SEC-NAME-TEMPLATE", _W, "C", _PRE,
       "name is a framework template default",
       "Replace the template's default name with your app's own name.",
       RISK_NAME_ICON_DUP),
    _r("SEC-ICON-XORIGIN", _W, "C", _PRE,
       "icon is loaded from another origin",
       "Host icons on your own origin so their content cannot change underneath you.",
       RISK_ICON_3P),
    _r("SEC-ICON-DUP", _W, "C", _PRE,
       "icon URL is shared with apps on other origins",
       "Use your own icon artwork hosted on your origin.",
       RISK_NAME_ICON_DUP),
    _r("SEC-DISPLAY-HIDES-URL", _W, "C", _PRE,
       "display mode hides the URL bar",
       "Prefer minimal-ui, which keeps the URL visible to users.",
       RISK_FULLSCREEN),
    _r("SEC-ID-TRACK", _W, "I", _PRE,
       "id looks like a per-user or tracking identifier",
       "Use a stable id such as \"/\"; the id must not identify users.",
       RISK_ID),
    _r("SEC-ID-XORIGIN", _W, "I", _PRE,
       "id resolves to another origin",
       "Use a relative id such as \"/\".",
       RISK_ID),
    _r("SEC-ID-DUP", _W, "I", _PRE,
       "id is shared by another app on the same origin",
       "Give every app on an origin its own id.",
       RISK_ID),
    _r("SEC-RELATED-UNPAIRED", _I, "C", _PRE,
       "related_applications and prefer_related_applications are not declared together",
       "Declare both fields or neither; one without the other has no effect.",
       RISK_RELATED),
    _r("SEC-RELATED-PREFER", _W, "C", _PRE,
       "install prompt is diverted to a related native application",
       "Only prefer related applications you publish yourself and whose store listing you control.",
       RISK_RELATED),
    _r("SEC-UNKNOWN-FIELD", _I, "I", _PRE,
       "field is not part of the manifest standard",
       "Remove undocumented fields; they are delivered to the browser unchecked and can carry tracking data.",
       RISK_ARBITRARY),
    _r("SEC-SW-CACHEONLY", _W, "I", _POST,
       "service worker serves fetches from cache only",
       "Use network-first or stale-while-revalidate so updates reach installed users.",
       RISK_CACHE_ONLY),
)}

# name/field checks that depend on knowing the real document origin
ORIGIN_DEPENDENT = frozenset({"SEC-SU-XORIGIN", "SEC-SC-XORIGIN", "SEC-ICON-XORIGIN", "SEC-ID-XORIGIN"})
