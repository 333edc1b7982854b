export {ConfigError, DataError, PluginError, ProtocolError} from './errors.js';
export {
  MAGIC_ERROR, MAGIC_HELLO, MAGIC_REQUEST, MAGIC_RESPONSE, PROTOCOL_VERSION,
  StreamReader, WINDOW_CHANNELS, bytesToFloats, floatsToBytes, packError,
  packHello, packRequest, packResponse, parseHello, parseRequestHeader,
  parseResponseHeader,
} from './protocol.js';
export type {FrameHeader} from './protocol.js';
export {
  loadSample, loadSamples, readGtMask, readManifest, readNpy, sortedGtPaths,
} from './dataset.js';
export type {LoadResult, Manifest, Sample} from './dataset.js';
export {maskIoU, meanIoU} from './metrics.js';
export {
  MAX_PARAMS, StreakNet, defaultConfig, initBackend, paramCount, validateConfig,
} from './model.js';
export type {LossKind, ModelConfig} from './model.js';
export {evaluate, fit, trainModel} from './train.js';
export type {EpochLog, EvalResult, FitOptions, TrainResult} from './train.js';
export {runServe, runStub, serveLoop} from './serve.js';
export type {MaskReply, WindowHandler} from './serve.js';
