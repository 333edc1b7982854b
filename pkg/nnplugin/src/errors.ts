export class PluginError extends Error {}

/** Bad configuration or command-line usage (exit code 1). */
export class ConfigError extends PluginError {}

/** Unreadable or inconsistent data on disk (exit code 2). */
export class DataError extends PluginError {}

/** Malformed bytes on the wire (exit code 3). */
export class ProtocolError extends PluginError {}
