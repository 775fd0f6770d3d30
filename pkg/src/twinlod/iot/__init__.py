from twinlod.iot.agent import CommandRecord, DeviceRegistration, IotAgent, parse_payload, type_value

__all__ = ["CommandRecord", "DeviceRegistration", "IotAgent", "parse_payload", "type_value"]
