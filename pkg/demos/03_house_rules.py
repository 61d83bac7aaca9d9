"""Extend the model with a house rule and whitelist a device pair.

Adds a requirement that the robot vacuum never speaks plain DNS after
midnight, and shows how an authorisation fact turns an inter-device
anomaly into a non-event.
"""
from iotdiag import diagnose, parse_atoms, parse_program
from iotdiag.assets import RULES_PATH

HOUSE_RULE = """
quiet_hour(0..6).
%@ requirement id=HOUSE1 goal="Integrity - Device" diagnosis="MitM/Malware" text="The vacuum does not resolve names during quiet hours"
:- communicate(_, irobotroomba, T, dns, _), quiet_hour(T).
"""

base = RULES_PATH.read_text()
model = parse_program(base + HOUSE_RULE)

night_dns = parse_atoms("available(irobotroomba). communicate(irobotroomba-cloud, irobotroomba, 3, dns, within_limit).")
print(diagnose(model, night_dns).to_text(), "\n")

lan_chatter = parse_atoms("available(techkinlightstrip). communicate(smart_speaker, techkinlightstrip, 14, https, within_limit).")
print(diagnose(model, lan_chatter).to_text(), "\n")

allowed = parse_program(base + HOUSE_RULE + "authorised(smart_speaker, techkinlightstrip).\n")
print("after authorising the pair:", diagnose(allowed, lan_chatter).to_text())
