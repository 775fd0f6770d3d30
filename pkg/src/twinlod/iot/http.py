"""HTTP surface of the device gateway."""

from __future__ import annotations

import json

from twinlod.httpkit import HttpService, Request, Response, route
from twinlod.iot.agent import DeviceRegistration, IotAgent


class IotHttp:
    def __init__(self, agent: IotAgent, name: str = "iot-agent", host: str = "127.0.0.1", port: int = 0):
        self.agent = agent
        self.service = HttpService(
            name,
            [
                route("POST", r"/iot/ingest", self.ingest),
                route("POST", r"/iot/devices", self.register),
                route("POST", r"/iot/commands", self.send_command),
                route("GET", r"/iot/commands", self.command_log),
            ],
            host=host,
            port=port,
        )

    def ingest(self, request: Request) -> Response:
        touched = self.agent.ingest(request.body.decode("utf-8"))
        return Response(200, {"touched": sorted(touched)})

    def register(self, request: Request) -> Response:
        body = request.json() or {}
        self.agent.register_device(
            DeviceRegistration(
                device_id=body.get("deviceId", ""),
                entity_id=body.get("entityId", ""),
                entity_type=body.get("entityType", ""),
                attribute_map=body.get("attributeMap", {}),
                command_map=body.get("commandMap", {}),
            )
        )
        return Response(201, {"deviceId": body.get("deviceId", "")})

    def send_command(self, request: Request) -> Response:
        body = request.json() or {}
        payload = self.agent.send_command(body.get("entityId", ""), body.get("command", ""))
        return Response(200, {"payload": payload})

    def command_log(self, request: Request) -> Response:
        lines = "".join(
            json.dumps(r.to_wire(), separators=(",", ":")) + "\n" for r in self.agent.command_log()
        )
        return Response(200, lines, content_type="application/x-ndjson")
